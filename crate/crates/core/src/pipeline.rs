//! One LiDAR-inertial pipeline over a (possibly shared) voxel map: filter
//! lifecycle WARMUP → ACTIVE ⇄ DIVERGED → REINIT, ICP-based initialization
//! of a secondary sensor, and divergence detection.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::{DualConfig, FilterConfig, SensorSlot};
use crate::correspondence::downsample;
use crate::dataset::{Dataset, Manifest};
use crate::deskew::{deskew_scan, integration_steps, PropagatedSegment};
use crate::error::{Error, Result};
use crate::esikf::{
    predict, update_lidar, update_relpose, FilterState, InitialSigma, LidarParams, PoseHistory, ProcessNoise,
    UpdateReport,
};
use crate::geometry::{so3_exp, Point3, Pose, Timestamp};
use crate::icp::{register, IcpParams, IcpResult, MIN_TARGET_POINTS};
use crate::sim::imu::ImuSample;
use crate::sim::lidar::ScanRecord;
use crate::sim::vio::RelPoseMeasurement;
use crate::tum::StampedPose;
use crate::voxel_map::{MapConfig, VoxelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PipelineStatus {
    Warmup,
    Active,
    Diverged,
    Reinit,
}

/// One diagnostics line per processed scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagRecord {
    #[serde(flatten)]
    pub report: UpdateReport,
    /// Status while the scan was processed.
    pub status: PipelineStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: Timestamp,
    pub from: PipelineStatus,
    pub to: PipelineStatus,
}

/// Audit entry for every map insertion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub t: Timestamp,
    pub status: PipelineStatus,
    pub degenerate: bool,
    pub offered: usize,
    pub stored: usize,
}

/// Everything a pipeline needs besides its sensor streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionParams {
    pub lidar: LidarParams,
    pub icp: IcpParams,
    pub map: MapConfig,
    pub scan_leaf: f64,
    pub map_leaf: f64,
    pub initial: InitialSigma,
    pub noise: ProcessNoise,
    pub dual: DualConfig,
    pub use_vio: bool,
}

impl SessionParams {
    pub fn new(filter: &FilterConfig, dual: &DualConfig, manifest: &Manifest, use_vio: bool) -> Self {
        Self {
            lidar: filter.lidar_params(manifest.range_noise),
            icp: filter.icp_params(),
            map: filter.map_config(),
            scan_leaf: filter.scan_leaf,
            map_leaf: filter.map_leaf,
            initial: filter.initial_sigma,
            noise: filter.process_noise(&manifest.imu_model),
            dual: *dual,
            use_vio,
        }
    }

    fn inflated_covariance(&self) -> crate::esikf::StateMatrix {
        self.initial.covariance() * self.dual.init_cov_inflation
    }
}

/// Streams of one sensor, borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct SensorInput<'a> {
    pub slot: SensorSlot,
    pub scans: &'a [ScanRecord],
    pub imu: &'a [ImuSample],
    pub vio: &'a [RelPoseMeasurement],
    /// Pose used when this sensor starts the session.
    pub initial_pose: Pose,
    /// Nominal body-to-sensor transform.
    pub mount_offset: Pose,
}

impl<'a> SensorInput<'a> {
    pub fn from_dataset(dataset: &'a Dataset, slot: SensorSlot) -> Option<Self> {
        dataset.sensor(slot).map(|(m, s)| Self {
            slot,
            scans: &s.scans,
            imu: &s.imu,
            vio: &s.vio,
            initial_pose: m.initial_pose,
            mount_offset: m.mount.offset,
        })
    }
}

/// Time tolerance when matching measurement and state times (s).
const TIME_EPS: f64 = 1e-6;
/// Extra IMU context around a propagation interval (s).
const IMU_MARGIN: f64 = 0.05;
/// Poses older than this are dropped from the relative-pose cache (s).
const HISTORY_SPAN: f64 = 5.0;
/// Registrations implying a faster motion than this are inconsistent (m/s).
const MAX_REINIT_SPEED: f64 = 3.0;

/// Appends segment samples, skipping the endpoint shared with the previous one.
fn extend(seg: PropagatedSegment, samples: &mut Vec<(Timestamp, Pose)>) {
    for (t, p) in seg.samples {
        match samples.last() {
            Some((last, _)) if t <= *last => {}
            _ => samples.push((t, p)),
        }
    }
}

fn imu_window(imu: &[ImuSample], t0: Timestamp, t1: Timestamp) -> &[ImuSample] {
    let a = imu.partition_point(|s| s.t < t0 - IMU_MARGIN);
    let b = imu.partition_point(|s| s.t <= t1 + IMU_MARGIN);
    &imu[a..b]
}

/// Outcome of an ICP-based (re)initialization attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOutcome {
    pub icp: IcpResult,
    /// Converged, well constrained and with a small residual.
    pub accepted: bool,
}

impl InitOutcome {
    fn report(&self, t: Timestamp) -> UpdateReport {
        UpdateReport {
            t,
            matched: self.icp.matched,
            rms: self.icp.rms,
            min_eig: self.icp.min_eig,
            iterations: self.icp.iterations,
            degenerate: !self.accepted,
        }
    }
}

fn try_register(points: &[Point3], map: &VoxelMap, guess: &Pose, params: &SessionParams) -> Result<InitOutcome> {
    let icp = register(points, map, guess, &params.icp)?;
    let accepted =
        icp.converged && icp.min_eig >= params.lidar.degeneracy_threshold && icp.rms <= params.dual.init_max_rms;
    Ok(InitOutcome { icp, accepted })
}

/// Registers the first deskewed scan of a secondary sensor (sensor frame)
/// into the map built by the primary pipeline, starting from `guess`.
/// Requires a warmed-up map of at least `dual.min_map_points` points.
pub fn initialize_secondary(
    points: &[Point3],
    map: &VoxelMap,
    guess: &Pose,
    params: &SessionParams,
) -> Result<InitOutcome> {
    if map.len() < params.dual.min_map_points.max(MIN_TARGET_POINTS) {
        return Err(Error::Precondition(format!(
            "map has {} points, secondary initialization needs {}",
            map.len(),
            params.dual.min_map_points
        )));
    }
    try_register(points, map, guess, params)
}

/// Applies the divergence rule to the most recent `cfg.window` reports:
/// an ACTIVE pipeline becomes DIVERGED when at least `degenerate_fraction`
/// of them are degenerate, or when every one has an RMS above `rms_limit`.
pub fn detect_divergence(status: PipelineStatus, reports: &[UpdateReport], cfg: &DualConfig) -> PipelineStatus {
    if status != PipelineStatus::Active || reports.len() < cfg.window {
        return status;
    }
    let window = &reports[reports.len() - cfg.window..];
    let degenerate = window.iter().filter(|r| r.degenerate).count();
    let sustained_rms = window.iter().all(|r| r.rms > cfg.rms_limit);
    if degenerate as f64 >= cfg.degenerate_fraction * cfg.window as f64 || sustained_rms {
        PipelineStatus::Diverged
    } else {
        status
    }
}

#[derive(Debug, Clone)]
pub struct PipelineHandle {
    pub slot: SensorSlot,
    pub status: PipelineStatus,
    /// `None` until the pipeline has been initialized.
    pub state: Option<FilterState>,
    pub diagnostics: Vec<DiagRecord>,
    pub transitions: Vec<Transition>,
    pub insertions: Vec<Insertion>,
    pub trajectory: Vec<StampedPose>,
    pub init_attempts: usize,
    /// Time the current ACTIVE period began.
    pub active_since: Option<Timestamp>,
    history: PoseHistory,
    /// Reports considered by divergence detection.
    window: Vec<UpdateReport>,
    reinit_streak: Vec<(Timestamp, Pose)>,
    vio_cursor: usize,
}

impl PipelineHandle {
    /// A pipeline waiting for initialization.
    pub fn warmup(slot: SensorSlot) -> Self {
        Self {
            slot,
            status: PipelineStatus::Warmup,
            state: None,
            diagnostics: Vec::new(),
            transitions: Vec::new(),
            insertions: Vec::new(),
            trajectory: Vec::new(),
            init_attempts: 0,
            active_since: None,
            history: PoseHistory::new(),
            window: Vec::new(),
            reinit_streak: Vec::new(),
            vio_cursor: 0,
        }
    }

    /// An ACTIVE pipeline at rest at `pose` with the nominal covariance.
    pub fn started(slot: SensorSlot, t: Timestamp, pose: Pose, initial: &InitialSigma) -> Self {
        let mut h = Self::warmup(slot);
        let mut state = FilterState::at_pose(t, pose);
        state.cov = initial.covariance();
        h.activate(state);
        h
    }

    fn set_status(&mut self, t: Timestamp, to: PipelineStatus) {
        if self.status != to {
            self.transitions.push(Transition {
                t,
                from: self.status,
                to,
            });
            self.status = to;
        }
    }

    /// Enters ACTIVE from `state` and starts a fresh divergence window.
    pub fn activate(&mut self, state: FilterState) {
        let t = state.t;
        self.history.push(t, state.pose());
        self.state = Some(state);
        self.window.clear();
        self.reinit_streak.clear();
        self.active_since = Some(t);
        self.set_status(t, PipelineStatus::Active);
    }

    fn record(&mut self, report: UpdateReport, status: PipelineStatus) {
        self.diagnostics.push(DiagRecord { report, status });
    }

    fn record_pose(&mut self) {
        if let Some(s) = &self.state {
            self.trajectory.push(StampedPose::new(s.t, s.pose()));
            self.history.push(s.t, s.pose());
            self.history.prune_before(s.t - HISTORY_SPAN);
        }
    }

    /// Predicts to `t_end`, fusing every relative-pose measurement that ends
    /// on the way. Returns the predicted state and the pose segment over the
    /// whole interval.
    fn propagate(
        &mut self,
        state: FilterState,
        input: &SensorInput,
        t_end: Timestamp,
        params: &SessionParams,
    ) -> Result<(FilterState, PropagatedSegment)> {
        let imu = imu_window(input.imu, state.t, t_end);
        let mut s = state;
        let mut samples: Vec<(Timestamp, Pose)> = Vec::new();
        while let Some(m) = input.vio.get(self.vio_cursor) {
            if m.tj > t_end + TIME_EPS {
                break;
            }
            self.vio_cursor += 1;
            if !params.use_vio {
                continue;
            }
            if m.tj < s.t - TIME_EPS {
                log::warn!(
                    "{}: relative pose ending at {} precedes the filter, dropped",
                    self.slot.name(),
                    m.tj
                );
                continue;
            }
            if m.tj > s.t + TIME_EPS {
                let (next, seg) = predict(&s, imu, m.tj, &params.noise)?;
                extend(seg, &mut samples);
                s = next;
            }
            s.t = m.tj;
            s = update_relpose(&s, m, &self.history, &params.lidar.iteration);
            self.history.push(s.t, s.pose());
        }
        let (next, seg) = predict(&s, imu, t_end, &params.noise)?;
        extend(seg, &mut samples);
        Ok((next, PropagatedSegment { samples }))
    }

    fn insert(&mut self, map: &mut VoxelMap, points: &[Point3], degenerate: bool, params: &SessionParams) {
        let Some(state) = &self.state else { return };
        // map monotonicity: only healthy ACTIVE updates contribute
        if self.status != PipelineStatus::Active || degenerate {
            return;
        }
        let pose = state.pose();
        let world: Vec<Point3> = downsample(points, params.map_leaf)
            .iter()
            .map(|p| pose.apply(p))
            .collect();
        let stored = map.insert_tagged(&world, self.slot.source_id());
        self.insertions.push(Insertion {
            t: state.t,
            status: self.status,
            degenerate,
            offered: world.len(),
            stored,
        });
    }

    /// Processes one scan of an initialized pipeline. With `bootstrap` an
    /// empty map is seeded from this scan at the predicted pose.
    pub fn process_scan(
        &mut self,
        scan: &ScanRecord,
        input: &SensorInput,
        map: &mut VoxelMap,
        params: &SessionParams,
        bootstrap: bool,
    ) -> Result<()> {
        let state = self
            .state
            .clone()
            .ok_or_else(|| Error::Precondition(format!("{} pipeline is not initialized", self.slot.name())))?;
        let (pred, seg) = self.propagate(state, input, scan.t1, params)?;
        let points = deskew_scan(scan, &seg)?;
        let sparse = downsample(&points, params.scan_leaf);
        let t = scan.t1;
        match self.status {
            PipelineStatus::Active => {
                let (post, report) = if bootstrap {
                    let report = UpdateReport {
                        t,
                        matched: 0,
                        rms: f64::NAN,
                        min_eig: f64::NAN,
                        iterations: 0,
                        degenerate: false,
                    };
                    (pred, report)
                } else {
                    update_lidar(&pred, &sparse, map, &params.lidar)
                };
                self.state = Some(post);
                self.insert(map, &points, report.degenerate, params);
                self.record(report, PipelineStatus::Active);
                if !bootstrap {
                    self.window.push(report);
                }
                if detect_divergence(self.status, &self.window, &params.dual) == PipelineStatus::Diverged {
                    log::info!("{}: diverged at t = {t:.3}, re-initializing", self.slot.name());
                    self.set_status(t, PipelineStatus::Diverged);
                    self.set_status(t, PipelineStatus::Reinit);
                    self.reinit_streak.clear();
                }
            }
            PipelineStatus::Diverged | PipelineStatus::Reinit => {
                self.state = Some(pred.clone());
                self.reinit_step(t, &sparse, &pred, map, params)?;
            }
            PipelineStatus::Warmup => unreachable!("initialized pipeline in WARMUP"),
        }
        self.record_pose();
        Ok(())
    }

    /// One re-registration attempt against the shared map. Two consecutive
    /// consistent registrations re-seed the pose and velocity and return the
    /// pipeline to ACTIVE with an inflated covariance.
    fn reinit_step(
        &mut self,
        t: Timestamp,
        sparse: &[Point3],
        pred: &FilterState,
        map: &VoxelMap,
        params: &SessionParams,
    ) -> Result<()> {
        let status = self.status;
        if map.len() < MIN_TARGET_POINTS || sparse.is_empty() {
            self.reinit_streak.clear();
            let report = UpdateReport {
                t,
                matched: 0,
                rms: f64::NAN,
                min_eig: 0.0,
                iterations: 0,
                degenerate: true,
            };
            self.record(report, status);
            return Ok(());
        }
        let outcome = try_register(sparse, map, &pred.pose(), params)?;
        self.record(outcome.report(t), status);
        if !outcome.accepted {
            self.reinit_streak.clear();
            return Ok(());
        }
        let pose = outcome.icp.pose;
        let consistent = self.reinit_streak.last().is_some_and(|(tp, pp)| {
            let dt = t - tp;
            dt > 0.0 && (pose.translation - pp.translation).norm() / dt <= MAX_REINIT_SPEED
        });
        if !consistent {
            self.reinit_streak.clear();
        }
        self.reinit_streak.push((t, pose));
        if self.reinit_streak.len() < params.dual.reinit_confirmations {
            return Ok(());
        }
        let velocity = match self.reinit_streak.as_slice() {
            [.., (t0, p0), (t1, p1)] => (p1.translation - p0.translation) / (t1 - t0),
            _ => pred.velocity,
        };
        let mut state = pred.clone();
        state.position = pose.translation;
        state.rotation = pose.rotation;
        state.velocity = velocity;
        state.cov = params.inflated_covariance();
        log::info!("{}: re-initialized at t = {t:.3}", self.slot.name());
        self.activate(state);
        Ok(())
    }

    /// One initialization attempt of a WARMUP secondary pipeline from its
    /// scan, a pose guess and the primary's world velocity.
    pub fn try_initialize(
        &mut self,
        scan: &ScanRecord,
        input: &SensorInput,
        map: &mut VoxelMap,
        guess: &Pose,
        velocity: &Vector3<f64>,
        params: &SessionParams,
    ) -> Result<bool> {
        self.init_attempts += 1;
        let points = deskew_rotation_only(scan, input.imu, guess, velocity)?;
        let sparse = downsample(&points, params.scan_leaf);
        let t = scan.t1;
        if sparse.is_empty() {
            self.record(
                UpdateReport {
                    t,
                    matched: 0,
                    rms: f64::NAN,
                    min_eig: 0.0,
                    iterations: 0,
                    degenerate: true,
                },
                PipelineStatus::Warmup,
            );
            return Ok(false);
        }
        let outcome = initialize_secondary(&sparse, map, guess, params)?;
        self.record(outcome.report(t), PipelineStatus::Warmup);
        if !outcome.accepted {
            if self.init_attempts >= params.dual.max_init_attempts {
                log::warn!(
                    "{}: initialization failed {} times, staying in WARMUP",
                    self.slot.name(),
                    self.init_attempts
                );
            }
            return Ok(false);
        }
        let mut state = FilterState::at_pose(t, outcome.icp.pose);
        state.velocity = *velocity;
        state.cov = params.inflated_covariance();
        // skip relative poses that ended before the pipeline existed
        self.vio_cursor = input.vio.partition_point(|m| m.tj <= t + TIME_EPS);
        self.activate(state);
        self.insert(map, &points, false, params);
        self.record_pose();
        Ok(true)
    }
}

/// Deskews with gyro-only attitude and a constant world velocity; used before
/// the secondary filter exists. Instantaneous scans pass through.
pub fn deskew_rotation_only(
    scan: &ScanRecord,
    imu: &[ImuSample],
    guess: &Pose,
    velocity: &Vector3<f64>,
) -> Result<Vec<Point3>> {
    if scan.is_instantaneous() {
        return Ok(scan.points.iter().map(|p| p.p).collect());
    }
    let steps = integration_steps(imu_window(imu, scan.t0, scan.t1), scan.t0, scan.t1)?;
    let mut rotation = guess.rotation;
    let mut t = scan.t0;
    let mut samples = vec![(t, Pose::new(rotation, Vector3::zeros()))];
    for step in &steps {
        rotation *= so3_exp(&(step.gyro * step.dt));
        t += step.dt;
        samples.push((t, Pose::new(rotation, velocity * (t - scan.t0))));
    }
    if let Some(last) = samples.last_mut() {
        last.0 = scan.t1;
    }
    deskew_scan(scan, &PropagatedSegment { samples })
}
