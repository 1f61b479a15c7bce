//! `portalio`: simulate datasets, run the odometry pipelines and evaluate
//! trajectories.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use portalio::config::{RunConfig, RunMode};
use portalio::dataset::{scene_path, simulate, Dataset};
use portalio::eval::{compute_ate, Alignment};
use portalio::scenario::{list_scenarios, load_scenario};
use portalio::session::run_dataset;
use portalio::sim::scene::Scene;
use portalio::{tum, Error, Result};

#[derive(Parser)]
#[command(name = "portalio", version, about = "LiDAR-inertial odometry toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a configuration.
    Simulate {
        /// Configuration TOML, or the name of a built-in scenario.
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the odometry on a dataset.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// single | dual | single+vio; defaults to the config's [run] mode.
        #[arg(long)]
        mode: Option<String>,
        /// Configuration TOML, or the name of a built-in scenario.
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimated trajectory with ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// none | umeyama
        #[arg(long, default_value = "umeyama")]
        align: String,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// List the built-in scenarios.
    Scenarios,
}

/// Loads a configuration file, or a built-in scenario when no such file exists.
fn load_config(arg: &str) -> Result<(RunConfig, Option<Scene>, PathBuf)> {
    let path = Path::new(arg);
    if path.exists() {
        let config = RunConfig::load(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        return Ok((config, None, dir));
    }
    if path.extension().is_some() || arg.contains('/') {
        return Err(Error::Config(format!("configuration file {arg} not found")));
    }
    let scenario = load_scenario(arg)?;
    Ok((scenario.config, Some(scenario.scene), PathBuf::new()))
}

fn cmd_simulate(config: &str, out: &Path) -> Result<()> {
    let (config, scene, dir) = load_config(config)?;
    let scene = match scene {
        Some(s) => s,
        None => Scene::load(&scene_path(&config, &dir))?,
    };
    let dataset = simulate(&config, &scene)?;
    dataset.write(out)?;
    for m in &dataset.manifest.sensors {
        eprintln!(
            "{}: {} scans, {} IMU samples, {} relative poses",
            m.slot.name(),
            m.scan_count,
            m.imu_count,
            m.vio_count
        );
    }
    Ok(())
}

fn cmd_run(dataset: &Path, mode: Option<&str>, config: &str, out: &Path) -> Result<()> {
    let (config, _, _) = load_config(config)?;
    let mode = match mode {
        Some(m) => m.parse::<RunMode>()?,
        None => config.run.mode,
    };
    let data = Dataset::read(dataset)?;
    if data.manifest.config_hash != config.hash() {
        log::warn!("dataset was generated from a different configuration");
    }
    let output = run_dataset(&data, &config, mode)?;
    output.write(out)?;
    for p in &output.pipelines {
        let degenerate = p.diagnostics.iter().filter(|d| d.report.degenerate).count();
        eprintln!(
            "{}: {:?}, {} poses, {} degenerate scans, {} status changes",
            p.slot.name(),
            p.status,
            p.trajectory.len(),
            degenerate,
            p.transitions.len()
        );
    }
    eprintln!("map: {} points", output.map.len());
    Ok(())
}

fn cmd_eval(est: &Path, gt: &Path, align: &str, json: bool) -> Result<()> {
    let align: Alignment = align.parse()?;
    let report = compute_ate(&tum::read(est)?, &tum::read(gt)?, align)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("poses      {}", report.count);
        println!("ATE rmse   {:.6} m", report.rmse);
        println!("ATE mean   {:.6} m", report.mean);
        println!("ATE median {:.6} m", report.median);
        println!("ATE max    {:.6} m", report.max);
        println!(
            "ATE xyz    {:.6} {:.6} {:.6} m",
            report.rmse_xyz[0], report.rmse_xyz[1], report.rmse_xyz[2]
        );
        println!("RPE 1 s    {:.6} m, {:.4} deg", report.rpe_trans, report.rpe_rot_deg);
    }
    Ok(())
}

fn cmd_scenarios() -> Result<()> {
    for s in list_scenarios() {
        println!("{:<18} {:<16} {}", s.name, s.regime, s.description);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, out } => cmd_simulate(config, out),
        Command::Run {
            dataset,
            mode,
            config,
            out,
        } => cmd_run(dataset, mode.as_deref(), config, out),
        Command::Eval { est, gt, align, json } => cmd_eval(est, gt, align, *json),
        Command::Scenarios => cmd_scenarios(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
