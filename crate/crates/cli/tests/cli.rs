use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn portalio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_portalio"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Built-in office loop cut to `duration` seconds, written as a config file.
fn short_config(dir: &Path, duration: f64) -> std::path::PathBuf {
    let scenes = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let text = fs::read_to_string(scenes.join("office-loop.toml"))
        .unwrap()
        .replace("duration = 60.0", &format!("duration = {duration}"))
        .replace(
            "scene = \"office.scene.json\"",
            &format!("scene = {:?}", path(&scenes.join("office.scene.json"))),
        );
    let file = dir.join("short.toml");
    fs::write(&file, text).unwrap();
    file
}

#[test]
fn lists_scenarios() {
    let out = portalio(&["scenarios"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["office-loop", "dual-office", "wall-stare", "wall-stare-dual"] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = portalio(&["simulate", "--config", "no-such-scenario", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let config = short_config(dir.path(), 1.0);
    let bad = fs::read_to_string(&config).unwrap().replace("\"mid360\"", "\"hdl64\"");
    fs::write(&config, bad).unwrap();
    let out = portalio(&[
        "simulate",
        "--config",
        path(&config),
        "--out",
        path(&dir.path().join("ds")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hdl64"));
}

#[test]
fn missing_dataset_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = portalio(&[
        "run",
        "--dataset",
        path(&dir.path().join("absent")),
        "--config",
        "office-loop",
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn simulate_run_eval_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = short_config(dir.path(), 2.0);
    let mut trajectories = Vec::new();
    for i in 0..2 {
        let ds = dir.path().join(format!("ds{i}"));
        let out = dir.path().join(format!("out{i}"));
        assert!(portalio(&["simulate", "--config", path(&config), "--out", path(&ds)])
            .status
            .success());
        let run = portalio(&[
            "run",
            "--dataset",
            path(&ds),
            "--config",
            path(&config),
            "--out",
            path(&out),
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        trajectories.push(fs::read(out.join("l1_traj.tum")).unwrap());
    }
    assert_eq!(trajectories[0], trajectories[1]);

    let gt = dir.path().join("ds0").join("l1_gt.tum");
    let est = dir.path().join("out0").join("l1_traj.tum");
    let out = portalio(&[
        "eval",
        "--est",
        path(&est),
        "--gt",
        path(&gt),
        "--align",
        "none",
        "--json",
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["rmse"].as_f64().unwrap() < 0.05);
    assert!(report["count"].as_u64().unwrap() > 10);

    let out = portalio(&["eval", "--est", path(&est), "--gt", path(&gt), "--align", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}
