//! Stand-in for an external visual-inertial odometry front end: relative
//! poses between keyframes, perturbed by a known covariance.

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose, Timestamp};
use crate::sim::stream_seed;
use crate::sim::trajectory::Trajectory;

/// Relative pose `inverse(P(ti)) ∘ P(tj)` with its 6×6 covariance, ordered
/// `[translation, rotation]`. Noise acts on the right:
/// `Z = T_rel ∘ (exp(δθ), δt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelPoseMeasurement {
    pub ti: Timestamp,
    pub tj: Timestamp,
    pub relative: Pose,
    pub covariance: Matrix6<f64>,
}

pub fn diagonal_covariance(sigma_t: f64, sigma_r: f64) -> Matrix6<f64> {
    let (vt, vr) = (sigma_t * sigma_t, sigma_r * sigma_r);
    Matrix6::from_diagonal(&Vector6::new(vt, vt, vt, vr, vr, vr))
}

/// Matrix square root of a PSD covariance via eigen-decomposition.
fn covariance_sqrt(cov: &Matrix6<f64>) -> Matrix6<f64> {
    let eig = cov.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Matrix6::from_diagonal(&sqrt_vals)
}

pub fn relative_pose<T: Trajectory + ?Sized>(sensor: &T, ti: Timestamp, tj: Timestamp) -> Pose {
    sensor.pose(ti).between(&sensor.pose(tj))
}

/// Consecutive keyframe pairs on `[t0, t1]`, one every `keyframe_period`.
pub fn simulate_vio_stream<T: Trajectory + ?Sized>(
    sensor: &T,
    t0: Timestamp,
    t1: Timestamp,
    keyframe_period: f64,
    covariance: &Matrix6<f64>,
    seed: u64,
    stream: u64,
) -> Result<Vec<RelPoseMeasurement>> {
    if !(keyframe_period > 0.0) {
        return Err(Error::Config(format!(
            "keyframe period must be > 0, got {keyframe_period}"
        )));
    }
    let root = covariance_sqrt(covariance);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, stream, u64::MAX - 1));
    let count = ((t1 - t0) / keyframe_period + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(count);
    for k in 1..=count {
        let ti = t0 + (k - 1) as f64 * keyframe_period;
        let tj = t0 + k as f64 * keyframe_period;
        let truth = relative_pose(sensor, ti, tj);
        let z = Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let e = root * z;
        let relative = if covariance.iter().all(|v| *v == 0.0) {
            truth
        } else {
            let dt = Vector3::new(e[0], e[1], e[2]);
            let dth = Vector3::new(e[3], e[4], e[5]);
            truth * Pose::new(so3_exp(&dth), dt)
        };
        out.push(RelPoseMeasurement {
            ti,
            tj,
            relative,
            covariance: *covariance,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_z;

    fn walker(t: f64) -> Pose {
        Pose::new(rot_z(0.3 * t), Vector3::new(1.2 * t, 0.1 * t * t, 0.0))
    }

    #[test]
    fn zero_noise_equals_ground_truth() {
        let stream = simulate_vio_stream(&walker, 0.0, 5.0, 0.5, &Matrix6::zeros(), 1, 0).unwrap();
        assert_eq!(stream.len(), 10);
        for m in &stream {
            assert_eq!(m.relative, relative_pose(&walker, m.ti, m.tj));
        }
    }

    #[test]
    fn degenerate_interval_is_identity() {
        let rel = relative_pose(&walker, 2.0, 2.0);
        let (dt, dr) = rel.distance(&Pose::identity());
        assert!(dt < 1e-12 && dr < 1e-12);
    }

    #[test]
    fn translation_noise_is_unbiased() {
        let sigma = 0.01;
        let cov = diagonal_covariance(sigma, 0.0);
        let stream = simulate_vio_stream(&walker, 0.0, 100.0, 0.1, &cov, 3, 0).unwrap();
        assert_eq!(stream.len(), 1000);
        let mut mean = Vector3::zeros();
        let mut var = 0.0;
        for m in &stream {
            let truth = relative_pose(&walker, m.ti, m.tj);
            let e = truth.rotation.inverse() * (m.relative.translation - truth.translation);
            mean += e;
            var += e.norm_squared();
        }
        mean /= 1000.0;
        let bound = 3.0 * sigma / 1000f64.sqrt();
        assert!(mean.iter().all(|c| c.abs() < bound), "{mean:?}");
        let std = (var / 3000.0).sqrt();
        assert!((std / sigma - 1.0).abs() < 0.1);
    }

    #[test]
    fn rejects_bad_period_and_is_deterministic() {
        assert!(simulate_vio_stream(&walker, 0.0, 5.0, 0.0, &Matrix6::zeros(), 1, 0).is_err());
        let cov = diagonal_covariance(0.01, 0.002);
        let a = simulate_vio_stream(&walker, 0.0, 5.0, 0.5, &cov, 1, 0).unwrap();
        let b = simulate_vio_stream(&walker, 0.0, 5.0, 0.5, &cov, 1, 0).unwrap();
        assert_eq!(a, b);
    }
}
