//! Run configuration: a TOML document with `[sim]`, `[filter]`, `[dual]`
//! and `[run]` sections plus an optional `[scenario]` header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correspondence::MatchParams;
use crate::error::{Error, Result};
use crate::esikf::{InitialSigma, IterationParams, LidarParams, ProcessNoise};
use crate::icp::IcpParams;
use crate::sim::imu::ImuModel;
use crate::sim::sensor::{mount, preset, MountConfig, SensorPreset};
use crate::sim::trajectory::TrajectoryKind;
use crate::voxel_map::MapConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioMeta>,
    pub sim: SimConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub dual: DualConfig,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub name: String,
    pub regime: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Scene JSON, relative to the config file.
    pub scene: PathBuf,
    pub trajectory: String,
    pub duration: f64,
    /// Mandatory: every random stream derives from it.
    pub seed: u64,
    pub l1: SensorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<SensorConfig>,
    /// Range noise σ along each ray (m).
    #[serde(default = "default_range_noise")]
    pub range_noise: f64,
    /// When false the IMU is ideal (no noise, no bias).
    #[serde(default = "default_true")]
    pub imu_noise: bool,
    #[serde(default = "default_imu_rate")]
    pub imu_rate: f64,
    #[serde(default)]
    pub vio: VioConfig,
}

fn default_range_noise() -> f64 {
    0.02
}

fn default_true() -> bool {
    true
}

fn default_imu_rate() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub preset: String,
    pub mount: String,
    /// Overrides the preset point rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_second: Option<f64>,
}

impl SensorConfig {
    pub fn resolve_preset(&self) -> Result<SensorPreset> {
        let mut p = preset(&self.preset)?;
        if let Some(pps) = self.points_per_second {
            p = p.with_points_per_second(pps);
        }
        p.validate()?;
        Ok(p)
    }

    pub fn resolve_mount(&self) -> Result<MountConfig> {
        let m = mount(&self.mount)?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VioConfig {
    pub enabled: bool,
    /// Keyframe period (s).
    pub period: f64,
    /// Relative translation / rotation σ per keyframe pair (m, rad).
    pub sigma_t: f64,
    pub sigma_r: f64,
}

impl Default for VioConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            period: 0.5,
            sigma_t: 0.01,
            sigma_r: 0.003,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub max_iterations: usize,
    pub convergence_tolerance: f64,
    /// Point-to-plane σ; defaults to `point_sigma_scale` times the dataset
    /// range noise.
    pub point_sigma: Option<f64>,
    /// Residuals that share map planes carry correlated map noise, so each
    /// one is worth less than an independent range sample.
    pub point_sigma_scale: f64,
    pub degeneracy_threshold: f64,
    pub min_matches: usize,
    pub knn: usize,
    pub search_radius: f64,
    pub plane_threshold: f64,
    pub plane_max_residual: f64,
    pub outlier_gate: f64,
    /// Leaf of the voxel-grid filter applied before the update (m).
    pub scan_leaf: f64,
    /// Leaf of the voxel-grid filter applied before map insertion (m).
    pub map_leaf: f64,
    pub voxel_size: f64,
    pub voxel_capacity: usize,
    pub min_point_distance: f64,
    pub initial_sigma: InitialSigma,
    /// Overrides process noise derived from the dataset IMU model.
    pub process_noise: Option<ProcessNoise>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let lidar = LidarParams::default();
        let map = MapConfig::default();
        Self {
            max_iterations: lidar.iteration.max_iterations,
            convergence_tolerance: lidar.iteration.tolerance,
            point_sigma: None,
            point_sigma_scale: 2.4,
            degeneracy_threshold: lidar.degeneracy_threshold,
            min_matches: lidar.min_matches,
            knn: lidar.matching.k,
            search_radius: lidar.matching.search_radius,
            plane_threshold: lidar.matching.plane_threshold,
            plane_max_residual: lidar.matching.plane_max_residual,
            outlier_gate: lidar.matching.outlier_gate,
            scan_leaf: 0.25,
            map_leaf: 0.1,
            voxel_size: map.voxel_size,
            voxel_capacity: map.capacity,
            min_point_distance: map.min_distance,
            initial_sigma: InitialSigma::default(),
            process_noise: None,
        }
    }
}

/// Smallest point σ used when the dataset is noise-free, so the update
/// weights stay finite.
pub const MIN_POINT_SIGMA: f64 = 0.005;

impl FilterConfig {
    pub fn matching(&self) -> MatchParams {
        MatchParams {
            k: self.knn,
            search_radius: self.search_radius,
            plane_threshold: self.plane_threshold,
            plane_max_residual: self.plane_max_residual,
            outlier_gate: self.outlier_gate,
        }
    }

    pub fn lidar_params(&self, range_noise: f64) -> LidarParams {
        LidarParams {
            iteration: self.iteration(),
            matching: self.matching(),
            point_sigma: self
                .point_sigma
                .unwrap_or(range_noise * self.point_sigma_scale)
                .max(MIN_POINT_SIGMA),
            degeneracy_threshold: self.degeneracy_threshold,
            min_matches: self.min_matches,
        }
    }

    pub fn iteration(&self) -> IterationParams {
        IterationParams {
            max_iterations: self.max_iterations,
            tolerance: self.convergence_tolerance,
        }
    }

    pub fn map_config(&self) -> MapConfig {
        MapConfig {
            voxel_size: self.voxel_size,
            capacity: self.voxel_capacity,
            min_distance: self.min_point_distance,
        }
    }

    pub fn icp_params(&self) -> IcpParams {
        IcpParams {
            matching: self.matching(),
            min_matches: self.min_matches,
            ..IcpParams::default()
        }
    }

    /// Process noise from the IMU model, floored so a noise-free IMU still
    /// lets the covariance absorb unmodeled effects.
    pub fn process_noise(&self, imu: &ImuModel) -> ProcessNoise {
        if let Some(p) = self.process_noise {
            return p;
        }
        let n = ProcessNoise::from(imu);
        ProcessNoise {
            gyro: n.gyro.max(1e-4),
            accel: n.accel.max(1e-3),
            gyro_bias: n.gyro_bias.max(1e-6),
            accel_bias: n.accel_bias.max(1e-5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("filter.convergence_tolerance", self.convergence_tolerance),
            ("filter.degeneracy_threshold", self.degeneracy_threshold),
            ("filter.search_radius", self.search_radius),
            ("filter.plane_threshold", self.plane_threshold),
            ("filter.plane_max_residual", self.plane_max_residual),
            ("filter.outlier_gate", self.outlier_gate),
            ("filter.scan_leaf", self.scan_leaf),
            ("filter.map_leaf", self.map_leaf),
            ("filter.voxel_size", self.voxel_size),
            ("filter.point_sigma_scale", self.point_sigma_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 || self.knn < 3 || self.voxel_capacity == 0 {
            return Err(Error::Config(
                "filter.max_iterations and filter.voxel_capacity must be >= 1, filter.knn >= 3".into(),
            ));
        }
        if let Some(s) = self.point_sigma {
            if !(s > 0.0) {
                return Err(Error::Config(format!("filter.point_sigma must be positive, got {s}")));
            }
        }
        if !(self.min_point_distance >= 0.0) {
            return Err(Error::Config("filter.min_point_distance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualConfig {
    /// L1 must have been ACTIVE this long before L2 initializes (s).
    pub warmup: f64,
    pub min_map_points: usize,
    pub max_init_attempts: usize,
    /// Initial covariance multiplier after ICP-based (re)initialization.
    pub init_cov_inflation: f64,
    /// ICP acceptance: maximum RMS residual (m).
    pub init_max_rms: f64,
    /// Divergence detection window (scans).
    pub window: usize,
    pub degenerate_fraction: f64,
    pub rms_limit: f64,
    /// Consecutive accepted ICP registrations needed to leave REINIT.
    pub reinit_confirmations: usize,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            warmup: 3.0,
            min_map_points: 5000,
            max_init_attempts: 20,
            init_cov_inflation: 10.0,
            init_max_rms: 0.05,
            window: 10,
            degenerate_fraction: 0.8,
            rms_limit: 0.3,
            reinit_confirmations: 2,
        }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 10 {
            return Err(Error::Config(format!("dual.window must be >= 10, got {}", self.window)));
        }
        if !(self.degenerate_fraction > 0.0 && self.degenerate_fraction <= 1.0) {
            return Err(Error::Config("dual.degenerate_fraction must be in (0, 1]".into()));
        }
        if !(self.warmup >= 0.0 && self.init_cov_inflation >= 1.0 && self.rms_limit > 0.0 && self.init_max_rms > 0.0) {
            return Err(Error::Config(
                "dual.warmup >= 0, dual.init_cov_inflation >= 1, dual.rms_limit and dual.init_max_rms > 0 required"
                    .into(),
            ));
        }
        if self.max_init_attempts == 0 || self.reinit_confirmations == 0 {
            return Err(Error::Config(
                "dual.max_init_attempts and dual.reinit_confirmations must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorSlot {
    L1,
    L2,
}

impl SensorSlot {
    pub fn name(self) -> &'static str {
        match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
        }
    }

    /// Tag stored with map points contributed by this sensor.
    pub fn source_id(self) -> u8 {
        match self {
            Self::L1 => 1,
            Self::L2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "dual")]
    Dual,
    #[serde(rename = "single+vio")]
    SingleVio,
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "dual" => Ok(Self::Dual),
            "single+vio" => Ok(Self::SingleVio),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected single|dual|single+vio)"
            ))),
        }
    }
}

/// Defaults for `portalio run` that scenarios may set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: RunMode,
    /// Sensor processed by the single-pipeline modes.
    pub single_sensor: SensorSlot,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: RunMode::Single,
            single_sensor: SensorSlot::L1,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn trajectory_kind(&self) -> Result<TrajectoryKind> {
        self.sim.trajectory.parse()
    }

    pub fn sensor(&self, slot: SensorSlot) -> Option<&SensorConfig> {
        match slot {
            SensorSlot::L1 => Some(&self.sim.l1),
            SensorSlot::L2 => self.sim.l2.as_ref(),
        }
    }

    pub fn imu_model(&self) -> ImuModel {
        let mut m = if self.sim.imu_noise {
            ImuModel::consumer_mems()
        } else {
            ImuModel::ideal(self.sim.imu_rate)
        };
        m.rate_hz = self.sim.imu_rate;
        m
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        if !(s.duration > 0.0 && s.duration.is_finite()) {
            return Err(Error::Config(format!(
                "sim.duration must be positive, got {}",
                s.duration
            )));
        }
        if !(s.range_noise >= 0.0) {
            return Err(Error::Config("sim.range_noise must be >= 0".into()));
        }
        self.trajectory_kind()?;
        for sensor in std::iter::once(&s.l1).chain(s.l2.iter()) {
            sensor.resolve_preset()?;
            sensor.resolve_mount()?;
        }
        self.imu_model().validate()?;
        if s.vio.enabled && !(s.vio.period > 0.0 && s.vio.sigma_t >= 0.0 && s.vio.sigma_r >= 0.0) {
            return Err(Error::Config("sim.vio needs period > 0 and sigmas >= 0".into()));
        }
        self.filter.validate()?;
        self.dual.validate()?;
        if let Some(meta) = &self.scenario {
            if !crate::scenario::REGIMES.contains(&meta.regime.as_str()) {
                return Err(Error::Config(format!("unknown regime tag {:?}", meta.regime)));
            }
        }
        Ok(())
    }
}
