//! Short end-to-end runs through simulate → run → write.

use portalio::config::{RunMode, SensorSlot};
use portalio::dataset::{simulate, Dataset};
use portalio::eval::{compute_ate, Alignment};
use portalio::pipeline::PipelineStatus;
use portalio::scenario::{load_scenario, Scenario};
use portalio::session::run_dataset;
use portalio::tum;

fn shortened(name: &str, duration: f64) -> Scenario {
    let mut sc = load_scenario(name).unwrap();
    sc.config.sim.duration = duration;
    sc
}

fn gt(ds: &Dataset, slot: SensorSlot) -> &[tum::StampedPose] {
    &ds.sensor(slot).unwrap().1.ground_truth
}

#[test]
fn single_run_tracks_ground_truth() {
    let sc = shortened("office-loop", 5.0);
    let ds = simulate(&sc.config, &sc.scene).unwrap();
    let out = run_dataset(&ds, &sc.config, RunMode::Single).unwrap();
    assert_eq!(out.pipelines.len(), 1);
    let p = &out.pipelines[0];
    assert_eq!(p.status, PipelineStatus::Active);
    assert!(p.transitions.iter().all(|t| t.to != PipelineStatus::Diverged));
    assert_eq!(p.trajectory.len(), ds.sensor(SensorSlot::L1).unwrap().1.scans.len());
    // no alignment: the filter starts at the true pose
    let ate = compute_ate(&p.trajectory, gt(&ds, SensorSlot::L1), Alignment::None).unwrap();
    assert!(ate.rmse < 0.02, "ATE {}", ate.rmse);
    assert!(!out.map.is_empty());
}

#[test]
fn dataset_round_trip_reproduces_the_run() {
    let sc = shortened("office-loop", 3.0);
    let ds = simulate(&sc.config, &sc.scene).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let back = Dataset::read(dir.path()).unwrap();
    let a = run_dataset(&ds, &sc.config, RunMode::Single).unwrap();
    let b = run_dataset(&back, &sc.config, RunMode::Single).unwrap();
    assert_eq!(a.pipelines[0].trajectory, b.pipelines[0].trajectory);
}

#[test]
fn dual_run_initializes_secondary_after_warmup() {
    let sc = shortened("dual-office", 6.0);
    let ds = simulate(&sc.config, &sc.scene).unwrap();
    let out = run_dataset(&ds, &sc.config, RunMode::Dual).unwrap();
    assert_eq!(out.pipelines.len(), 2);
    let l2 = out.pipeline(SensorSlot::L2).unwrap();
    let first = l2.trajectory.first().expect("secondary initialized");
    assert!(first.t >= sc.config.dual.warmup);
    assert!(l2.init_attempts >= 1);
    for p in &out.pipelines {
        assert!(p
            .insertions
            .iter()
            .all(|i| i.status == PipelineStatus::Active && !i.degenerate));
        let ate = compute_ate(&p.trajectory, gt(&ds, p.slot), Alignment::Umeyama).unwrap();
        assert!(ate.rmse < 0.02, "{:?} ATE {}", p.slot, ate.rmse);
    }
    // both pipelines contribute to the shared map
    assert!(l2.insertions.iter().map(|i| i.stored).sum::<usize>() > 0);
}

#[test]
fn written_trajectories_parse_back() {
    let sc = shortened("office-loop", 2.0);
    let ds = simulate(&sc.config, &sc.scene).unwrap();
    let out = run_dataset(&ds, &sc.config, RunMode::Single).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let traj = &out.pipelines[0].trajectory;
    let back = tum::read(&dir.path().join("l1_traj.tum")).unwrap();
    assert_eq!(back.len(), traj.len());
    for (a, b) in back.iter().zip(traj) {
        assert!((a.t - b.t).abs() < 1e-9);
        let (dt, dr) = a.pose.distance(&b.pose);
        assert!(dt < 1e-6 && dr < 1e-6);
    }
    assert!(dir.path().join("session.json").exists());
}
