//! Walking-operator trajectories, body mounts, and their 1 kHz sampling.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{from_rpy, rot_z, slerp, Pose, Timestamp};
use crate::sim::sensor::MountConfig;

/// Anything that yields a world-frame pose at a given time.
pub trait Trajectory: Sync {
    fn pose(&self, t: Timestamp) -> Pose;
}

impl<F: Fn(Timestamp) -> Pose + Sync> Trajectory for F {
    fn pose(&self, t: Timestamp) -> Pose {
        self(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    WalkLoop,
    Corridor,
    Stairs,
    WallStare,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walk-loop" => Ok(Self::WalkLoop),
            "corridor" => Ok(Self::Corridor),
            "stairs" => Ok(Self::Stairs),
            "wall-stare" => Ok(Self::WallStare),
            other => Err(Error::Config(format!("unknown trajectory kind {other:?}"))),
        }
    }
}

pub const HEAD_HEIGHT: f64 = 1.65;
pub const WALK_SPEED: f64 = 1.2;
const STAIR_SPEED: f64 = 0.6;
const STAIR_SLOPE: f64 = 0.17 / 0.28;
const LOOP_A: f64 = 6.0;
const LOOP_B: f64 = 3.5;
const WALL_STARE_DISTANCE: f64 = 5.0;

/// Quintic smoothstep, C² at both ends.
fn smoothstep(y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    y * y * y * (10.0 + y * (-15.0 + 6.0 * y))
}

/// Integral of `smoothstep` from 0 to y.
fn smoothstep_integral(y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    let y4 = y * y * y * y;
    y4 * (2.5 + y * (-3.0 + y))
}

/// Rest-to-rest motion over `[t0, t1]` with smooth acceleration ramps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothMove {
    pub t0: f64,
    pub t1: f64,
    pub ramp: f64,
    pub distance: f64,
}

impl SmoothMove {
    fn ramp_fraction(&self) -> f64 {
        (self.ramp / (self.t1 - self.t0)).min(0.5)
    }

    /// Normalized speed in [0, 1].
    pub fn activity(&self, t: f64) -> f64 {
        if t <= self.t0 || t >= self.t1 {
            return 0.0;
        }
        let x = (t - self.t0) / (self.t1 - self.t0);
        let r = self.ramp_fraction();
        if x < r {
            smoothstep(x / r)
        } else if x > 1.0 - r {
            smoothstep((1.0 - x) / r)
        } else {
            1.0
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        if t <= self.t0 {
            return 0.0;
        }
        if t >= self.t1 {
            return self.distance;
        }
        let x = (t - self.t0) / (self.t1 - self.t0);
        let r = self.ramp_fraction();
        let total = 1.0 - r;
        let w = if x < r {
            r * smoothstep_integral(x / r)
        } else if x > 1.0 - r {
            total - r * smoothstep_integral((1.0 - x) / r)
        } else {
            0.5 * r + (x - r)
        };
        self.distance * w / total
    }

    /// Cruise speed reached between the ramps.
    pub fn cruise_speed(&self) -> f64 {
        self.distance / ((self.t1 - self.t0) * (1.0 - self.ramp_fraction()))
    }
}

/// Closed ellipse parameterized by arc length.
#[derive(Debug, Clone)]
struct LoopPath {
    a: f64,
    b: f64,
    phase0: f64,
    /// cumulative arc length at `knots`
    table: Vec<f64>,
    perimeter: f64,
}

const GL_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];
const LOOP_KNOTS: usize = 4096;

impl LoopPath {
    fn new(a: f64, b: f64, phase0: f64) -> Self {
        let mut path = LoopPath {
            a,
            b,
            phase0,
            table: vec![0.0; LOOP_KNOTS + 1],
            perimeter: 0.0,
        };
        let h = TAU / LOOP_KNOTS as f64;
        for i in 0..LOOP_KNOTS {
            let lo = i as f64 * h;
            path.table[i + 1] = path.table[i] + path.segment_length(lo, lo + h);
        }
        path.perimeter = path.table[LOOP_KNOTS];
        path
    }

    fn speed(&self, phi: f64) -> f64 {
        let p = phi + self.phase0;
        (self.a * p.sin()).hypot(self.b * p.cos())
    }

    fn segment_length(&self, lo: f64, hi: f64) -> f64 {
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        GL_NODES
            .iter()
            .zip(GL_WEIGHTS)
            .map(|(x, w)| w * self.speed(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Curve parameter at arc length `s`.
    fn phi_at(&self, s: f64) -> f64 {
        let laps = (s / self.perimeter).floor();
        let s = s - laps * self.perimeter;
        let h = TAU / LOOP_KNOTS as f64;
        let i = self
            .table
            .partition_point(|&v| v <= s)
            .saturating_sub(1)
            .min(LOOP_KNOTS - 1);
        let base = i as f64 * h;
        let mut phi = base + h * (s - self.table[i]) / (self.table[i + 1] - self.table[i]);
        for _ in 0..4 {
            let f = self.table[i] + self.segment_length(base, phi) - s;
            phi -= f / self.speed(phi);
        }
        phi + laps * TAU
    }

    fn point(&self, phi: f64) -> (f64, f64, f64) {
        let p = phi + self.phase0;
        let (x, y) = (self.a * p.cos(), self.b * p.sin());
        let heading = (self.b * p.cos()).atan2(-self.a * p.sin());
        (x, y, heading)
    }
}

#[derive(Debug, Clone, Copy)]
struct Gait {
    step_hz: f64,
    phases: [f64; 6],
}

#[derive(Debug, Clone)]
enum Path {
    Loop {
        path: LoopPath,
        walk: SmoothMove,
    },
    Line {
        walk: SmoothMove,
        lateral: f64,
        slope: f64,
    },
    WallStare {
        out: SmoothMove,
        turn: SmoothMove,
        back: SmoothMove,
    },
}

/// Continuous-time head (body) trajectory of a walking operator.
#[derive(Debug, Clone)]
pub struct BodyTrajectory {
    pub kind: TrajectoryKind,
    pub duration: f64,
    pub seed: u64,
    path: Path,
    gait: Gait,
}

/// Builds the body trajectory for a scenario. Every trajectory starts with
/// a standstill so that the filter and the second LiDAR can initialize.
pub fn generate_trajectory(kind: TrajectoryKind, duration: f64, seed: u64) -> Result<BodyTrajectory> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::Config(format!(
            "trajectory duration must be > 0, got {duration}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6a65_6374_6f72);
    let gait = Gait {
        step_hz: 1.8 + rng.random_range(-0.1..0.1),
        phases: std::array::from_fn(|_| rng.random_range(0.0..TAU)),
    };
    // phase lengths shrink for very short runs
    let scale = (duration / 10.0).min(1.0);
    let still = 4.0 * scale;
    let tail = 0.5 * scale;
    let ramp = 1.5 * scale;
    let path = match kind {
        TrajectoryKind::WalkLoop => {
            let path = LoopPath::new(LOOP_A, LOOP_B, rng.random_range(0.0..TAU));
            let cruise_time = duration - still - tail - ramp;
            let laps = (WALK_SPEED * cruise_time / path.perimeter).round().max(1.0);
            let walk = SmoothMove {
                t0: still,
                t1: duration - tail,
                ramp,
                distance: laps * path.perimeter,
            };
            Path::Loop { path, walk }
        }
        TrajectoryKind::Corridor | TrajectoryKind::Stairs => {
            let (speed, slope) = if kind == TrajectoryKind::Stairs {
                (STAIR_SPEED, STAIR_SLOPE)
            } else {
                (WALK_SPEED, 0.0)
            };
            let cruise_time = duration - still - tail - ramp;
            let walk = SmoothMove {
                t0: still,
                t1: duration - tail,
                ramp,
                distance: speed * cruise_time,
            };
            Path::Line {
                walk,
                lateral: rng.random_range(-0.1..0.1),
                slope,
            }
        }
        TrajectoryKind::WallStare => {
            let turn_time = 2.5;
            let tail = 1.0;
            let walk_time = WALL_STARE_DISTANCE / WALK_SPEED + 1.5;
            let nominal = 4.0 + 2.0 * walk_time + turn_time + tail;
            // stare takes whatever remains; short runs compress every phase
            let (s, stare) = if duration >= nominal + 1.0 {
                (1.0, duration - nominal)
            } else {
                let s = duration / (nominal + 1.0);
                (s, s)
            };
            let t_out = 4.0 * s;
            let out = SmoothMove {
                t0: t_out,
                t1: t_out + walk_time * s,
                ramp: 1.5 * s,
                distance: WALL_STARE_DISTANCE * s,
            };
            let turn = SmoothMove {
                t0: out.t1 + stare,
                t1: out.t1 + stare + turn_time * s,
                ramp: turn_time * s * 0.5,
                distance: PI,
            };
            let back = SmoothMove {
                t0: turn.t1,
                t1: turn.t1 + walk_time * s,
                ramp: 1.5 * s,
                distance: WALL_STARE_DISTANCE * s,
            };
            Path::WallStare { out, turn, back }
        }
    };
    Ok(BodyTrajectory {
        kind,
        duration,
        seed,
        path,
        gait,
    })
}

impl BodyTrajectory {
    /// Gait intensity in [0, 1]; zero while standing still.
    pub fn activity(&self, t: f64) -> f64 {
        match &self.path {
            Path::Loop { walk, .. } | Path::Line { walk, .. } => walk.activity(t),
            Path::WallStare { out, back, .. } => out.activity(t) + back.activity(t),
        }
    }

    /// Ground-plane position (x, y), height offset, and heading.
    fn base(&self, t: f64) -> (f64, f64, f64, f64) {
        match &self.path {
            Path::Loop { path, walk } => {
                let (x, y, heading) = path.point(path.phi_at(walk.position(t)));
                (x, y, 0.0, heading)
            }
            Path::Line { walk, lateral, slope } => {
                let d = walk.position(t);
                (d, *lateral, slope * d, 0.0)
            }
            Path::WallStare { out, turn, back } => {
                let x = out.position(t) - back.position(t);
                (x, 0.0, 0.0, turn.position(t))
            }
        }
    }

    /// Total path length walked.
    pub fn path_length(&self) -> f64 {
        match &self.path {
            Path::Loop { walk, .. } => walk.distance,
            Path::Line { walk, slope, .. } => walk.distance * (1.0 + slope * slope).sqrt(),
            Path::WallStare { out, back, .. } => out.distance + back.distance,
        }
    }

    pub fn pose(&self, t: f64) -> Pose {
        let (x, y, dz, heading) = self.base(t);
        let act = self.activity(t);
        let g = &self.gait;
        let step = TAU * g.step_hz * t;
        let bob = 0.02 * act * (step + g.phases[0]).sin();
        let sway = 0.015 * act * (0.5 * step + g.phases[1]).sin();
        let pitch = 1f64.to_radians() * act * (step + g.phases[2]).sin();
        let roll = 1.5f64.to_radians() * act * (0.5 * step + g.phases[3]).sin();
        let look = 3f64.to_radians() * act * (TAU * 0.25 * t + g.phases[4]).sin();
        let lateral = rot_z(heading) * Vector3::new(0.0, sway, 0.0);
        Pose::new(
            from_rpy(roll, pitch, heading + look),
            Vector3::new(x, y, HEAD_HEIGHT + dz + bob) + lateral,
        )
    }

    pub fn start_phase(&self) -> f64 {
        self.gait.phases[5]
    }
}

impl Trajectory for BodyTrajectory {
    fn pose(&self, t: Timestamp) -> Pose {
        BodyTrajectory::pose(self, t)
    }
}

/// Sensor trajectory: body pose, nominal mount offset, then mount sway.
#[derive(Debug, Clone)]
pub struct MountedTrajectory {
    pub body: Arc<BodyTrajectory>,
    pub mount: MountConfig,
    phases: [f64; 7],
}

impl MountedTrajectory {
    pub fn new(body: Arc<BodyTrajectory>, mount: MountConfig, sensor_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(body.seed.wrapping_mul(31).wrapping_add(sensor_index) ^ 0x7377_6179);
        let phases = std::array::from_fn(|_| rng.random_range(0.0..TAU));
        Self { body, mount, phases }
    }

    /// Sensor pose relative to the body at time `t`.
    pub fn mount_pose(&self, t: f64) -> Pose {
        self.mount.offset * self.mount.sway_rotation(t, self.body.activity(t), &self.phases)
    }
}

impl Trajectory for MountedTrajectory {
    fn pose(&self, t: Timestamp) -> Pose {
        self.body.pose(t) * self.mount_pose(t)
    }
}

/// Uniformly sampled trajectory, interpolated linearly in translation and by
/// slerp in rotation. Times outside the sampled range clamp to the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub t0: f64,
    pub rate_hz: f64,
    pub poses: Vec<Pose>,
}

impl SampledTrajectory {
    pub fn sample<T: Trajectory + ?Sized>(source: &T, t0: f64, t1: f64, rate_hz: f64) -> Self {
        let n = ((t1 - t0) * rate_hz).round() as usize + 1;
        let poses = (0..n).map(|i| source.pose(t0 + i as f64 / rate_hz)).collect();
        Self { t0, rate_hz, poses }
    }

    pub fn sample_1khz<T: Trajectory + ?Sized>(source: &T, t0: f64, t1: f64) -> Self {
        Self::sample(source, t0, t1, 1000.0)
    }

    pub fn end(&self) -> f64 {
        self.t0 + (self.poses.len() - 1) as f64 / self.rate_hz
    }
}

impl Trajectory for SampledTrajectory {
    fn pose(&self, t: Timestamp) -> Pose {
        let x = ((t - self.t0) * self.rate_hz).max(0.0);
        let i = x.floor() as usize;
        if i + 1 >= self.poses.len() {
            return *self.poses.last().expect("non-empty trajectory");
        }
        let s = x - i as f64;
        if s == 0.0 {
            return self.poses[i];
        }
        let (a, b) = (&self.poses[i], &self.poses[i + 1]);
        Pose::new(
            slerp(&a.rotation, &b.rotation, s),
            a.translation + (b.translation - a.translation) * s,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_log;
    use crate::sim::sensor::mount;

    #[test]
    fn kind_parsing_and_duration_validation() {
        assert_eq!("walk-loop".parse::<TrajectoryKind>().unwrap(), TrajectoryKind::WalkLoop);
        assert!("spiral".parse::<TrajectoryKind>().is_err());
        assert!(generate_trajectory(TrajectoryKind::WalkLoop, 0.0, 1).is_err());
        assert!(generate_trajectory(TrajectoryKind::WalkLoop, -1.0, 1).is_err());
    }

    #[test]
    fn smooth_move_profile() {
        let m = SmoothMove {
            t0: 1.0,
            t1: 6.0,
            ramp: 1.0,
            distance: 4.0,
        };
        assert_eq!(m.position(0.5), 0.0);
        assert_eq!(m.position(7.0), 4.0);
        assert!((m.position(6.0 - 1e-12) - 4.0).abs() < 1e-9);
        assert!((m.position(3.5) - 2.0).abs() < 1e-12);
        // numerical derivative of position tracks the activity profile
        let v = m.cruise_speed();
        for i in 1..100 {
            let t = 1.0 + 5.0 * i as f64 / 100.0;
            let h = 1e-6;
            let num = (m.position(t + h) - m.position(t - h)) / (2.0 * h);
            assert!((num - v * m.activity(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_trajectory(TrajectoryKind::WalkLoop, 20.0, 42).unwrap();
        let b = generate_trajectory(TrajectoryKind::WalkLoop, 20.0, 42).unwrap();
        let sa = SampledTrajectory::sample_1khz(&a, 0.0, 20.0);
        let sb = SampledTrajectory::sample_1khz(&b, 0.0, 20.0);
        assert_eq!(sa, sb);
        let c = generate_trajectory(TrajectoryKind::WalkLoop, 20.0, 43).unwrap();
        assert_ne!(sa.poses[5000], c.pose(5.0));
    }

    #[test]
    fn walk_loop_closes() {
        let traj = generate_trajectory(TrajectoryKind::WalkLoop, 60.0, 5).unwrap();
        let start = traj.pose(0.0).translation;
        let end = traj.pose(60.0).translation;
        assert!((start - end).norm() < 0.1, "gap {}", (start - end).norm());
        // walking pace close to 1.2 m/s
        let Path::Loop { walk, .. } = &traj.path else {
            unreachable!()
        };
        assert!(
            (walk.cruise_speed() - WALK_SPEED).abs() < 0.25,
            "{}",
            walk.cruise_speed()
        );
    }

    #[test]
    fn arc_length_parameterization_gives_constant_speed() {
        let path = LoopPath::new(LOOP_A, LOOP_B, 0.7);
        let mut prev = path.point(path.phi_at(0.0));
        let ds = 0.01;
        for i in 1..3000 {
            let cur = path.point(path.phi_at(i as f64 * ds));
            let step = (cur.0 - prev.0).hypot(cur.1 - prev.1);
            assert!((step - ds).abs() < 1e-6, "{step}");
            prev = cur;
        }
    }

    #[test]
    fn trajectories_have_bounded_jerk() {
        for kind in [
            TrajectoryKind::WalkLoop,
            TrajectoryKind::Corridor,
            TrajectoryKind::Stairs,
            TrajectoryKind::WallStare,
        ] {
            let traj = generate_trajectory(kind, 30.0, 9).unwrap();
            let h = 1e-3;
            let acc = |t: f64| {
                (traj.pose(t + h).translation - 2.0 * traj.pose(t).translation + traj.pose(t - h).translation) / (h * h)
            };
            let mut max_jerk: f64 = 0.0;
            let mut t = 0.01;
            while t < 29.9 {
                max_jerk = max_jerk.max(((acc(t + 0.01) - acc(t)) / 0.01).norm());
                t += 0.01;
            }
            assert!(max_jerk < 50.0, "{kind:?} jerk {max_jerk}");
        }
    }

    #[test]
    fn wall_stare_goes_out_and_back() {
        let traj = generate_trajectory(TrajectoryKind::WallStare, 26.0, 1).unwrap();
        let p0 = traj.pose(0.0);
        let mid = traj.pose(12.0);
        let end = traj.pose(26.0);
        assert!((mid.translation.x - WALL_STARE_DISTANCE).abs() < 0.05);
        assert!((end.translation.x - p0.translation.x).abs() < 0.05);
        // facing back after the turn
        let yaw = so3_log(&(p0.rotation.inverse() * end.rotation));
        assert!((yaw.norm() - PI).abs() < 0.1);
    }

    #[test]
    fn sampled_trajectory_reproduces_samples_and_interpolates() {
        let traj = generate_trajectory(TrajectoryKind::Corridor, 10.0, 2).unwrap();
        let s = SampledTrajectory::sample_1khz(&traj, 0.0, 10.0);
        assert_eq!(s.poses.len(), 10_001);
        assert_eq!(s.pose(5.0), traj.pose(5.0));
        let (dt, dr) = s.pose(5.0004).distance(&traj.pose(5.0004));
        assert!(dt < 1e-6 && dr < 1e-6);
        assert_eq!(s.pose(20.0), *s.poses.last().unwrap());
    }

    #[test]
    fn mounted_trajectory_composes_body_and_offset() {
        let body = Arc::new(generate_trajectory(TrajectoryKind::Corridor, 10.0, 2).unwrap());
        let m = MountedTrajectory::new(body.clone(), mount("helmet-tilted").unwrap(), 0);
        let expected = body.pose(6.0) * mount("helmet-tilted").unwrap().offset;
        let (dt, dr) = m.pose(6.0).distance(&expected);
        assert!(dt < 1e-12 && dr < 1e-12);
    }
}
