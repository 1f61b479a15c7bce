//! Every built-in scenario, run with its own configuration, shows the
//! behaviour its regime tag names.

use portalio::config::{RunMode, SensorSlot};
use portalio::dataset::simulate;
use portalio::eval::{compute_ate, Alignment};
use portalio::pipeline::PipelineStatus;
use portalio::scenario::{list_scenarios, load_scenario};
use portalio::session::{run_dataset, PipelineOutput};

fn degenerate_scans(p: &PipelineOutput) -> usize {
    p.diagnostics.iter().filter(|d| d.report.degenerate).count()
}

fn run(
    name: &str,
) -> (
    portalio::scenario::Scenario,
    portalio::dataset::Dataset,
    portalio::session::SessionOutput,
) {
    let sc = load_scenario(name).unwrap();
    let ds = simulate(&sc.config, &sc.scene).unwrap();
    let out = run_dataset(&ds, &sc.config, sc.config.run.mode).unwrap();
    (sc, ds, out)
}

#[test]
fn nominal_scenarios_stay_well_constrained() {
    for name in ["office-loop", "dual-office"] {
        let (sc, ds, out) = run(name);
        assert_eq!(sc.info.regime, "NOMINAL");
        for p in &out.pipelines {
            assert_eq!(degenerate_scans(p), 0, "{name} {:?}", p.slot);
            assert_eq!(p.status, PipelineStatus::Active, "{name} {:?}", p.slot);
            let gt = &ds.sensor(p.slot).unwrap().1.ground_truth;
            let ate = compute_ate(&p.trajectory, gt, Alignment::Umeyama).unwrap();
            assert!(ate.rmse < 0.05, "{name} {:?} ATE {}", p.slot, ate.rmse);
        }
    }
}

#[test]
fn wall_stare_raises_degenerate_windows() {
    let (sc, _, out) = run("wall-stare");
    assert_eq!(sc.info.regime, "DEGENERATE-WALL");
    let p = out.pipeline(sc.config.run.single_sensor).unwrap();
    assert!(degenerate_scans(p) >= sc.config.dual.window);
}

#[test]
fn wall_stare_dual_diverges_and_recovers() {
    let (sc, _, out) = run("wall-stare-dual");
    assert_eq!(sc.info.regime, "DUAL-RECOVERY");
    assert_eq!(sc.config.run.mode, RunMode::Dual);
    let l2 = out.pipeline(SensorSlot::L2).unwrap();
    let diverged = l2
        .transitions
        .iter()
        .position(|t| t.to == PipelineStatus::Diverged)
        .expect("diverged");
    assert!(l2.transitions[diverged..]
        .iter()
        .any(|t| t.from == PipelineStatus::Reinit && t.to == PipelineStatus::Active));
    assert_eq!(l2.status, PipelineStatus::Active);
    let l1 = out.pipeline(SensorSlot::L1).unwrap();
    assert!(l1.transitions.iter().all(|t| t.to != PipelineStatus::Diverged));
}

#[test]
fn limited_sensor_scenarios_complete() {
    for info in list_scenarios() {
        if !matches!(info.regime.as_str(), "RANGE-LIMITED" | "FOV-LIMITED") {
            continue;
        }
        let (sc, ds, out) = run(&info.name);
        let p = &out.pipelines[0];
        let streams = ds.sensor(p.slot).unwrap().1;
        assert_eq!(p.trajectory.len(), streams.scans.len(), "{}", info.name);
        // every pose is finite and the run stays bounded in the scene
        assert!(p
            .trajectory
            .iter()
            .all(|s| s.pose.translation.iter().all(|v| v.is_finite())));
        let ate = compute_ate(&p.trajectory, &streams.ground_truth, Alignment::Umeyama).unwrap();
        eprintln!(
            "{} ({}): ATE {:.4} m, {} degenerate scans",
            info.name,
            sc.info.regime,
            ate.rmse,
            degenerate_scans(p)
        );
    }
}
