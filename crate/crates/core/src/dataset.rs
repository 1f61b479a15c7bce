//! Simulated datasets: per-sensor scan, IMU, VIO and ground-truth streams,
//! held in memory or stored as a directory of JSON-Lines logs plus a
//! manifest.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Matrix6, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SensorSlot};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::sim::imu::{synthesize_imu, ImuModel, ImuSample};
use crate::sim::lidar::{cast_scan, scan_interval, RangeNoise, ScanPoint, ScanRecord};
use crate::sim::scene::Scene;
use crate::sim::sensor::{MountConfig, SensorPreset};
use crate::sim::trajectory::{generate_trajectory, MountedTrajectory, Trajectory};
use crate::sim::vio::{diagonal_covariance, simulate_vio_stream, RelPoseMeasurement};
use crate::tum::{self, StampedPose};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `bytes` to `path` via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorManifest {
    pub slot: SensorSlot,
    pub preset: SensorPreset,
    pub mount: MountConfig,
    /// Ground-truth sensor pose at t = 0.
    pub initial_pose: Pose,
    pub scan_count: usize,
    pub imu_count: usize,
    pub vio_count: usize,
}

impl SensorManifest {
    fn file(&self, suffix: &str) -> String {
        format!("{}_{suffix}", self.slot.name())
    }

    pub fn scans_file(&self) -> String {
        self.file("scans.jsonl")
    }

    pub fn imu_file(&self) -> String {
        self.file("imu.jsonl")
    }

    pub fn vio_file(&self) -> String {
        self.file("vio.jsonl")
    }

    pub fn gt_file(&self) -> String {
        self.file("gt.tum")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// SHA-256 of the generating configuration.
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub seed: u64,
    pub duration: f64,
    pub trajectory: String,
    pub range_noise: f64,
    pub imu_model: ImuModel,
    pub sensors: Vec<SensorManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorStreams {
    pub scans: Vec<ScanRecord>,
    pub imu: Vec<ImuSample>,
    pub vio: Vec<RelPoseMeasurement>,
    /// Sensor pose at every scan end.
    pub ground_truth: Vec<StampedPose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Parallel to `manifest.sensors`.
    pub streams: Vec<SensorStreams>,
}

impl Dataset {
    pub fn sensor(&self, slot: SensorSlot) -> Option<(&SensorManifest, &SensorStreams)> {
        self.manifest
            .sensors
            .iter()
            .zip(&self.streams)
            .find(|(m, _)| m.slot == slot)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (m, s) in self.manifest.sensors.iter().zip(&self.streams) {
            write_atomic(&dir.join(m.scans_file()), scans_to_jsonl(&s.scans).as_bytes())?;
            write_atomic(&dir.join(m.imu_file()), imu_to_jsonl(&s.imu).as_bytes())?;
            write_atomic(&dir.join(m.vio_file()), vio_to_jsonl(&s.vio).as_bytes())?;
            tum::write(&dir.join(m.gt_file()), &s.ground_truth)?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                &path,
                format!("unsupported dataset format {}", manifest.format_version),
            ));
        }
        let mut streams = Vec::with_capacity(manifest.sensors.len());
        for m in &manifest.sensors {
            streams.push(SensorStreams {
                scans: read_lines(&dir.join(m.scans_file()), parse_scan_line)?,
                imu: read_lines(&dir.join(m.imu_file()), parse_imu_line)?,
                vio: read_lines(&dir.join(m.vio_file()), parse_vio_line)?,
                ground_truth: tum::read(&dir.join(m.gt_file()))?,
            });
        }
        Ok(Self { manifest, streams })
    }
}

/// Resolves the scene path of `config` relative to `config_dir`.
pub fn scene_path(config: &RunConfig, config_dir: &Path) -> PathBuf {
    if config.sim.scene.is_absolute() {
        config.sim.scene.clone()
    } else {
        config_dir.join(&config.sim.scene)
    }
}

/// Generates every stream described by `config` in `scene`.
pub fn simulate(config: &RunConfig, scene: &Scene) -> Result<Dataset> {
    config.validate()?;
    let sim = &config.sim;
    let body = Arc::new(generate_trajectory(config.trajectory_kind()?, sim.duration, sim.seed)?);
    let imu_model = config.imu_model();
    let slots = std::iter::once((SensorSlot::L1, &sim.l1)).chain(sim.l2.iter().map(|s| (SensorSlot::L2, s)));
    let mut sensors = Vec::new();
    let mut streams = Vec::new();
    for (index, (slot, sensor)) in slots.enumerate() {
        let preset = sensor.resolve_preset()?;
        let mount = sensor.resolve_mount()?;
        let traj = MountedTrajectory::new(body.clone(), mount.clone(), index as u64);
        let stream = index as u64;
        let noise = RangeNoise {
            sigma: sim.range_noise,
            seed: sim.seed,
            stream,
        };
        let mut scans = Vec::new();
        for k in 0.. {
            let (_, t1) = scan_interval(&preset, k);
            if t1 > sim.duration + 1e-9 {
                break;
            }
            scans.push(cast_scan(scene, &traj, &preset, k, &noise));
        }
        let imu = synthesize_imu(&traj, 0.0, sim.duration, &imu_model, sim.seed, stream);
        let vio = if sim.vio.enabled {
            let cov = diagonal_covariance(sim.vio.sigma_t, sim.vio.sigma_r);
            simulate_vio_stream(&traj, 0.0, sim.duration, sim.vio.period, &cov, sim.seed, stream)?
        } else {
            Vec::new()
        };
        let ground_truth = scans.iter().map(|s| StampedPose::new(s.t1, traj.pose(s.t1))).collect();
        sensors.push(SensorManifest {
            slot,
            preset,
            mount,
            initial_pose: traj.pose(0.0),
            scan_count: scans.len(),
            imu_count: imu.len(),
            vio_count: vio.len(),
        });
        streams.push(SensorStreams {
            scans,
            imu,
            vio,
            ground_truth,
        });
    }
    Ok(Dataset {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            config_hash: config.hash(),
            scenario: config.scenario.as_ref().map(|s| s.name.clone()),
            seed: sim.seed,
            duration: sim.duration,
            trajectory: sim.trajectory.clone(),
            range_noise: sim.range_noise,
            imu_model,
            sensors,
        },
        streams,
    })
}

fn push_json_f64(out: &mut String, v: f64) {
    // serde_json prints the shortest representation that round-trips
    out.push_str(&serde_json::to_string(&v).expect("finite float"));
}

fn push_array(out: &mut String, values: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_json_f64(out, v);
    }
    out.push(']');
}

pub fn scans_to_jsonl(scans: &[ScanRecord]) -> String {
    let mut out = String::new();
    for s in scans {
        out.push_str("{\"t0\":");
        push_json_f64(&mut out, s.t0);
        out.push_str(",\"t1\":");
        push_json_f64(&mut out, s.t1);
        out.push_str(",\"points\":[");
        for (i, p) in s.points.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push('[');
            for v in [p.t, p.p.x, p.p.y, p.p.z] {
                push_json_f64(&mut out, v);
                out.push(',');
            }
            let _ = write!(out, "{}]", p.surface_id);
        }
        out.push_str("]}\n");
    }
    out
}

pub fn imu_to_jsonl(imu: &[ImuSample]) -> String {
    let mut out = String::new();
    for s in imu {
        push_array(
            &mut out,
            [s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z],
        );
        out.push('\n');
    }
    out
}

pub fn vio_to_jsonl(vio: &[RelPoseMeasurement]) -> String {
    let mut out = String::new();
    for m in vio {
        let q = m.relative.rotation;
        let t = m.relative.translation;
        let head = [m.ti, m.tj, t.x, t.y, t.z, q.i, q.j, q.k, q.w];
        // row-major covariance
        let cov = (0..36).map(|k| m.covariance[(k / 6, k % 6)]);
        push_array(&mut out, head.into_iter().chain(cov));
        out.push('\n');
    }
    out
}

#[derive(Deserialize)]
struct ScanLine {
    t0: f64,
    t1: f64,
    points: Vec<(f64, f64, f64, f64, u32)>,
}

fn parse_scan_line(line: &str) -> std::result::Result<ScanRecord, String> {
    let s: ScanLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if !(s.t0 <= s.t1) {
        return Err(format!("scan start {} after end {}", s.t0, s.t1));
    }
    let points = s
        .points
        .into_iter()
        .map(|(t, x, y, z, surface_id)| ScanPoint {
            t,
            p: Vector3::new(x, y, z),
            surface_id,
        })
        .collect();
    Ok(ScanRecord {
        t0: s.t0,
        t1: s.t1,
        points,
    })
}

fn parse_imu_line(line: &str) -> std::result::Result<ImuSample, String> {
    let v: [f64; 7] = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Ok(ImuSample {
        t: v[0],
        gyro: Vector3::new(v[1], v[2], v[3]),
        accel: Vector3::new(v[4], v[5], v[6]),
    })
}

fn parse_vio_line(line: &str) -> std::result::Result<RelPoseMeasurement, String> {
    let v: Vec<f64> = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if v.len() != 45 {
        return Err(format!("expected 45 values, got {}", v.len()));
    }
    let q = Quaternion::new(v[8], v[5], v[6], v[7]);
    let norm = q.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(format!("quaternion norm {norm} is not 1"));
    }
    // values were written from a unit quaternion; keep them bit-exact
    let rotation = UnitQuaternion::new_unchecked(q);
    Ok(RelPoseMeasurement {
        ti: v[0],
        tj: v[1],
        relative: Pose::new(rotation, Vector3::new(v[2], v[3], v[4])),
        covariance: Matrix6::from_row_slice(&v[9..45]),
    })
}

fn read_lines<T>(path: &Path, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line).map_err(|m| Error::parse(path, format!("line {}: {m}", i + 1)))?);
    }
    Ok(out)
}
