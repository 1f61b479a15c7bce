//! IMU strapdown propagation and per-point scan motion compensation.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::esikf::FilterState;
use crate::geometry::{interpolate, so3_exp, Point3, Pose, Timestamp};
use crate::sim::imu::ImuSample;
use crate::sim::lidar::ScanRecord;

/// Poses from strapdown integration over an interval, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedSegment {
    pub samples: Vec<(Timestamp, Pose)>,
}

impl PropagatedSegment {
    pub fn start(&self) -> Timestamp {
        self.samples.first().map(|s| s.0).unwrap_or(f64::NAN)
    }

    pub fn end(&self) -> Timestamp {
        self.samples.last().map(|s| s.0).unwrap_or(f64::NAN)
    }

    /// Pose at `t`, interpolated between the bracketing samples.
    pub fn pose_at(&self, t: Timestamp) -> Result<Pose> {
        let n = self.samples.len();
        if n == 0 || t < self.start() || t > self.end() {
            return Err(Error::Coverage(format!(
                "time {t} outside propagated segment [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        if n == 1 {
            return Ok(self.samples[0].1);
        }
        let i = self.samples.partition_point(|s| s.0 <= t).clamp(1, n - 1);
        let (t0, p0) = &self.samples[i - 1];
        let (t1, p1) = &self.samples[i];
        interpolate(p0, *t0, p1, *t1, t)
    }
}

/// Mean IMU reading over one integration interval, bias-corrected.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepInput {
    pub dt: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

fn sample_at(imu: &[ImuSample], t: Timestamp) -> (Vector3<f64>, Vector3<f64>) {
    let i = imu.partition_point(|s| s.t <= t);
    if i == 0 {
        return (imu[0].gyro, imu[0].accel);
    }
    if i == imu.len() {
        let last = imu[imu.len() - 1];
        return (last.gyro, last.accel);
    }
    let (a, b) = (&imu[i - 1], &imu[i]);
    let s = (t - a.t) / (b.t - a.t);
    (a.gyro + (b.gyro - a.gyro) * s, a.accel + (b.accel - a.accel) * s)
}

/// Splits `[t0, t1]` at IMU sample times and returns the averaged reading of
/// the linearly interpolated signal on each piece.
///
/// Errors when samples are unsorted or when coverage has a hole wider than
/// twice the nominal (median) sample period.
pub(crate) fn integration_steps(imu: &[ImuSample], t0: Timestamp, t1: Timestamp) -> Result<Vec<StepInput>> {
    if imu.len() < 2 {
        return Err(Error::Coverage(format!(
            "need at least two IMU samples for [{t0}, {t1}]"
        )));
    }
    if imu.windows(2).any(|w| !(w[0].t < w[1].t)) {
        return Err(Error::Precondition("IMU timestamps must be strictly increasing".into()));
    }
    if t1 < t0 {
        return Err(Error::Precondition(format!("propagation end {t1} precedes start {t0}")));
    }
    let mut gaps: Vec<f64> = imu.windows(2).map(|w| w[1].t - w[0].t).collect();
    gaps.sort_by(f64::total_cmp);
    let nominal = gaps[gaps.len() / 2];
    let limit = 2.0 * nominal;
    if imu[0].t > t0 + limit || imu[imu.len() - 1].t < t1 - limit {
        return Err(Error::Coverage(format!(
            "IMU samples [{}, {}] do not cover [{t0}, {t1}]",
            imu[0].t,
            imu[imu.len() - 1].t
        )));
    }
    let mut knots = vec![t0];
    for w in imu.windows(2) {
        if w[1].t > t0 && w[0].t < t1 && w[1].t - w[0].t > limit {
            return Err(Error::Coverage(format!(
                "IMU gap of {:.4} s at t = {}",
                w[1].t - w[0].t,
                w[0].t
            )));
        }
    }
    knots.extend(imu.iter().map(|s| s.t).filter(|&t| t > t0 && t < t1));
    if t1 > t0 {
        knots.push(t1);
    }
    Ok(knots
        .windows(2)
        .map(|w| {
            let (ga, aa) = sample_at(imu, w[0]);
            let (gb, ab) = sample_at(imu, w[1]);
            StepInput {
                dt: w[1] - w[0],
                gyro: (ga + gb) * 0.5,
                accel: (aa + ab) * 0.5,
            }
        })
        .collect())
}

/// Advances the nominal state by one strapdown step; the specific force is
/// rotated with the attitude at the middle of the step.
pub(crate) fn strapdown_step(state: &mut FilterState, step: &StepInput) {
    let w = step.gyro - state.gyro_bias;
    let a = step.accel - state.accel_bias;
    let rot_mid = state.rotation * so3_exp(&(w * (0.5 * step.dt)));
    let a_world = rot_mid * a + state.gravity;
    state.position += state.velocity * step.dt + a_world * (0.5 * step.dt * step.dt);
    state.velocity += a_world * step.dt;
    state.rotation *= so3_exp(&(w * step.dt));
    state.rotation.renormalize();
    state.t += step.dt;
}

/// Integrates the nominal state from `state.t` to `t_end`, recording the pose
/// at every knot. Biases are taken from the state and held fixed.
pub fn propagate_imu(state: &FilterState, imu: &[ImuSample], t_end: Timestamp) -> Result<PropagatedSegment> {
    let steps = integration_steps(imu, state.t, t_end)?;
    let mut s = state.clone();
    let mut samples = Vec::with_capacity(steps.len() + 1);
    samples.push((s.t, s.pose()));
    for step in &steps {
        strapdown_step(&mut s, step);
        samples.push((s.t, s.pose()));
    }
    if let Some(last) = samples.last_mut() {
        // keep the end time exact despite accumulated rounding
        last.0 = t_end;
    }
    Ok(PropagatedSegment { samples })
}

/// Maps every point into the scan-end sensor frame:
/// `p' = Pose(t_end)⁻¹ ∘ Pose(t) · p`. Scans whose points share one
/// timestamp (ToF frames) are returned unchanged.
pub fn deskew_scan(scan: &ScanRecord, segment: &PropagatedSegment) -> Result<Vec<Point3>> {
    if scan.is_instantaneous() {
        return Ok(scan.points.iter().map(|p| p.p).collect());
    }
    let end_inv = segment.pose_at(scan.t1)?.inverse();
    scan.points
        .par_iter()
        .map(|p| Ok(end_inv.compose(&segment.pose_at(p.t)?).apply(&p.p)))
        .collect()
}

/// Segment sampled directly from a known trajectory.
pub fn segment_from_trajectory<T: crate::sim::trajectory::Trajectory + ?Sized>(
    trajectory: &T,
    t0: Timestamp,
    t1: Timestamp,
    rate_hz: f64,
) -> PropagatedSegment {
    let n = (((t1 - t0) * rate_hz).ceil() as usize).max(1);
    let samples = (0..=n)
        .map(|i| {
            let t = if i == n {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / n as f64
            };
            (t, trajectory.pose(t))
        })
        .collect();
    PropagatedSegment { samples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_z, so3_log};
    use crate::sim::imu::{synthesize_imu, ImuModel};
    use crate::sim::lidar::ScanPoint;

    fn still_imu(t0: f64, t1: f64, rate: f64) -> Vec<ImuSample> {
        let n = ((t1 - t0) * rate).round() as usize;
        (0..=n)
            .map(|i| ImuSample {
                t: t0 + i as f64 / rate,
                gyro: Vector3::zeros(),
                accel: Vector3::new(0.0, 0.0, 9.81),
            })
            .collect()
    }

    #[test]
    fn stationary_pose_is_constant() {
        let state = FilterState::at_pose(0.0, Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)));
        let seg = propagate_imu(&state, &still_imu(0.0, 2.0, 200.0), 2.0).unwrap();
        for (_, p) in &seg.samples {
            let (dt, dr) = p.distance(&state.pose());
            assert!(dt < 1e-9 && dr < 1e-9);
        }
    }

    #[test]
    fn constant_yaw_rate_integrates_to_one_radian() {
        let mut imu = still_imu(0.0, 1.0, 200.0);
        for s in &mut imu {
            s.gyro = Vector3::new(0.0, 0.0, 1.0);
        }
        let seg = propagate_imu(&FilterState::at_pose(0.0, Pose::identity()), &imu, 1.0).unwrap();
        let yaw = so3_log(&seg.samples.last().unwrap().1.rotation);
        assert!((yaw - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-6);
    }

    #[test]
    fn constant_acceleration_from_rest() {
        let mut imu = still_imu(0.0, 1.0, 1000.0);
        for s in &mut imu {
            s.accel.x = 1.0;
        }
        let seg = propagate_imu(&FilterState::at_pose(0.0, Pose::identity()), &imu, 1.0).unwrap();
        let p = seg.samples.last().unwrap().1.translation;
        assert!((p.x - 0.5).abs() < 1e-4 && p.y.abs() < 1e-12 && p.z.abs() < 1e-9);
    }

    #[test]
    fn coverage_gap_is_rejected() {
        let mut imu = still_imu(0.0, 1.0, 200.0);
        imu.retain(|s| !(0.4..0.45).contains(&s.t));
        let state = FilterState::at_pose(0.0, Pose::identity());
        assert!(matches!(propagate_imu(&state, &imu, 1.0), Err(Error::Coverage(_))));
        let short = still_imu(0.0, 0.5, 200.0);
        assert!(matches!(propagate_imu(&state, &short, 1.0), Err(Error::Coverage(_))));
    }

    #[test]
    fn tof_scan_passes_through() {
        let points: Vec<_> = (0..10)
            .map(|i| ScanPoint {
                t: 1.0,
                p: Vector3::new(i as f64, 1.0, 2.0),
                surface_id: 0,
            })
            .collect();
        let scan = ScanRecord {
            t0: 1.0,
            t1: 1.0,
            points,
        };
        let moving = |t: f64| Pose::new(rot_z(t), Vector3::new(t, 0.0, 0.0));
        let seg = segment_from_trajectory(&moving, 0.9, 1.0, 200.0);
        let out = deskew_scan(&scan, &seg).unwrap();
        assert!(out.iter().zip(&scan.points).all(|(a, b)| *a == b.p));
    }

    #[test]
    fn constant_velocity_shift() {
        let moving = |t: f64| Pose::from_translation(Vector3::new(t, 0.0, 0.0));
        let seg = segment_from_trajectory(&moving, 0.0, 0.1, 1000.0);
        let scan = ScanRecord {
            t0: 0.0,
            t1: 0.1,
            points: vec![
                ScanPoint {
                    t: 0.05,
                    p: Vector3::new(3.0, 1.0, 0.0),
                    surface_id: 0,
                },
                ScanPoint {
                    t: 0.1,
                    p: Vector3::new(3.0, 1.0, 0.0),
                    surface_id: 0,
                },
            ],
        };
        let out = deskew_scan(&scan, &seg).unwrap();
        assert!((out[0] - Vector3::new(2.95, 1.0, 0.0)).norm() < 1e-12);
        assert_eq!(out[1], scan.points[1].p);
        let outside = ScanRecord {
            t0: 0.0,
            t1: 0.2,
            points: scan.points.clone(),
        };
        assert!(deskew_scan(&outside, &seg).is_err());
    }

    #[test]
    fn imu_propagation_tracks_smooth_motion() {
        // yaw-rate plus forward velocity; accelerations stay in the horizontal plane
        let traj = |t: f64| {
            Pose::new(
                rot_z(0.5 * t + 0.2 * (2.0 * t).sin()),
                Vector3::new(1.2 * t, 0.3 * (1.5 * t).sin(), 1.6),
            )
        };
        let imu = synthesize_imu(&traj, 0.0, 1.2, &ImuModel::ideal(200.0), 0, 0);
        let h = 1e-4;
        let p0 = traj(0.0);
        let mut state = FilterState::at_pose(0.0, p0);
        state.velocity = (traj(h).translation - traj(-h).translation) / (2.0 * h);
        let seg = propagate_imu(&state, &imu, 1.0).unwrap();
        let (dt, dr) = seg.samples.last().unwrap().1.distance(&traj(1.0));
        assert!(dt < 1e-3 && dr < 1e-4, "{dt} {dr}");
    }
}
