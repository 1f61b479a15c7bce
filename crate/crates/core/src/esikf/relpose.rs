//! Loosely coupled relative-pose (VIO) update.

use nalgebra::{Matrix6, Vector6};

use super::{iterated_update, ErrorVector, FilterState, Information, IterationParams, StateMatrix};
use crate::geometry::{so3_log, so3_right_jacobian_inv, Pose, Timestamp};
use crate::sim::vio::RelPoseMeasurement;

/// Posterior poses kept for later relative-pose residuals.
#[derive(Debug, Clone, Default)]
pub struct PoseHistory {
    entries: Vec<(Timestamp, Pose)>,
}

/// Stored and requested times match when closer than this (s).
const TIME_MATCH: f64 = 1e-6;

impl PoseHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the pose at `t`; times must be non-decreasing.
    pub fn push(&mut self, t: Timestamp, pose: Pose) {
        if let Some(last) = self.entries.last_mut() {
            if (last.0 - t).abs() < TIME_MATCH {
                last.1 = pose;
                return;
            }
        }
        self.entries.push((t, pose));
    }

    pub fn lookup(&self, t: Timestamp) -> Option<Pose> {
        let i = self.entries.partition_point(|e| e.0 < t - TIME_MATCH);
        self.entries
            .get(i)
            .filter(|e| (e.0 - t).abs() < TIME_MATCH)
            .map(|e| e.1)
    }

    /// Drops entries older than `t`.
    pub fn prune_before(&mut self, t: Timestamp) {
        let i = self.entries.partition_point(|e| e.0 < t - TIME_MATCH);
        self.entries.drain(..i);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Residual `[R_zᵀ(t_pred − t_z), log(R_zᵀ R_pred)]` of the predicted relative
/// pose `T_i⁻¹ T_j` against the measurement `Z`, and its Jacobian with
/// respect to `(δp_j, δθ_j)`; the pose at `t_i` is held fixed.
pub(crate) fn relpose_residual(pose_i: &Pose, pose_j: &Pose, measured: &Pose) -> (Vector6<f64>, Matrix6<f64>) {
    let predicted = pose_i.between(pose_j);
    let rz_t = measured.rotation.inverse();
    let r_t = rz_t * (predicted.translation - measured.translation);
    let r_th = so3_log(&(rz_t * predicted.rotation));
    let mut h = Matrix6::zeros();
    let ri_t = pose_i.rotation.inverse().to_rotation_matrix().into_inner();
    h.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(rz_t.to_rotation_matrix().into_inner() * ri_t));
    h.fixed_view_mut::<3, 3>(3, 3).copy_from(&so3_right_jacobian_inv(&r_th));
    let r = Vector6::new(r_t.x, r_t.y, r_t.z, r_th.x, r_th.y, r_th.z);
    (r, h)
}

/// Fuses one relative-pose measurement ending at the current state time.
/// Measurements whose start pose is missing from `history`, that do not end
/// at `state.t`, or that carry a non-invertible covariance are dropped with a
/// warning and leave the state unchanged.
pub fn update_relpose(
    state: &FilterState,
    measurement: &RelPoseMeasurement,
    history: &PoseHistory,
    params: &IterationParams,
) -> FilterState {
    let Some(pose_i) = history.lookup(measurement.ti) else {
        log::warn!("no stored pose at t = {}, relative pose dropped", measurement.ti);
        return state.clone();
    };
    if (measurement.tj - state.t).abs() >= TIME_MATCH {
        log::warn!(
            "relative pose ends at {} but the filter is at {}, dropped",
            measurement.tj,
            state.t
        );
        return state.clone();
    }
    let Some(weight) = measurement.covariance.try_inverse() else {
        log::warn!("singular relative-pose covariance at t = {}, dropped", measurement.tj);
        return state.clone();
    };
    let outcome = iterated_update(state, params, |x| {
        let (r, h) = relpose_residual(&pose_i, &x.pose(), &measurement.relative);
        let mut a = StateMatrix::zeros();
        let mut b = ErrorVector::zeros();
        a.fixed_view_mut::<6, 6>(0, 0).copy_from(&(h.transpose() * weight * h));
        b.fixed_rows_mut::<6>(0).copy_from(&(h.transpose() * weight * r));
        Some(Information { a, b })
    });
    outcome.map(|o| o.state).unwrap_or_else(|| state.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esikf::InitialSigma;
    use crate::geometry::{from_rpy, so3_exp};
    use crate::sim::vio::diagonal_covariance;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state_at(t: f64, pose: Pose) -> FilterState {
        let mut s = FilterState::at_pose(t, pose);
        s.cov = InitialSigma::default().covariance();
        s.cov.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
        s.cov.fixed_view_mut::<3, 3>(0, 0).scale_mut(0.01);
        s
    }

    #[test]
    fn residual_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let mut v = |s: f64| {
                Vector3::new(
                    rng.random_range(-s..s),
                    rng.random_range(-s..s),
                    rng.random_range(-s..s),
                )
            };
            let pi = Pose::from_parts(v(1.0), v(3.0));
            let pj = Pose::from_parts(v(1.0), v(3.0));
            let z = pi.between(&pj).perturbed(&v(0.05), &v(0.05));
            let (_, h) = relpose_residual(&pi, &pj, &z);
            let eps = 1e-6;
            for c in 0..6 {
                let mut e = Vector6::zeros();
                e[c] = eps;
                let f = |s: f64| {
                    let dp = Vector3::new(e[0], e[1], e[2]) * s;
                    let dth = Vector3::new(e[3], e[4], e[5]) * s;
                    relpose_residual(&pi, &pj.perturbed(&dp, &dth), &z).0
                };
                let numeric = (f(1.0) - f(-1.0)) / (2.0 * eps);
                assert!((numeric - h.column(c)).norm() < 1e-6, "column {c}");
            }
        }
    }

    #[test]
    fn zero_innovation_leaves_state() {
        let pi = Pose::new(from_rpy(0.1, 0.0, 0.4), Vector3::new(1.0, 0.0, 1.5));
        let pj = Pose::new(from_rpy(0.1, 0.05, 0.6), Vector3::new(1.5, 0.2, 1.5));
        let mut history = PoseHistory::new();
        history.push(1.0, pi);
        let s = state_at(1.5, pj);
        let m = RelPoseMeasurement {
            ti: 1.0,
            tj: 1.5,
            relative: pi.between(&pj),
            covariance: diagonal_covariance(0.01, 0.01),
        };
        let out = update_relpose(&s, &m, &history, &IterationParams::default());
        let (dt, dr) = out.pose().distance(&pj);
        assert!(dt < 1e-12 && dr < 1e-12);
        assert!(out.cov[(0, 0)] < s.cov[(0, 0)]);
    }

    #[test]
    fn offset_pulls_position_monotonically_in_confidence() {
        let pi = Pose::identity();
        let pj = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let mut history = PoseHistory::new();
        history.push(0.0, pi);
        let s = state_at(1.0, pj);
        let mut last = 0.0;
        for sigma in [1.0, 0.1, 0.01, 0.001] {
            let m = RelPoseMeasurement {
                ti: 0.0,
                tj: 1.0,
                relative: Pose::from_translation(Vector3::new(1.1, 0.0, 0.0)),
                covariance: diagonal_covariance(sigma, 0.01),
            };
            let out = update_relpose(&s, &m, &history, &IterationParams::default());
            let moved = out.position.x - 1.0;
            assert!(moved > last && moved <= 0.1 + 1e-9, "{sigma}: {moved}");
            last = moved;
        }
        assert!(last > 0.099);
    }

    #[test]
    fn missing_start_pose_is_dropped() {
        let history = PoseHistory::new();
        let s = state_at(1.0, Pose::identity());
        let m = RelPoseMeasurement {
            ti: 0.5,
            tj: 1.0,
            relative: Pose::new(so3_exp(&Vector3::new(0.0, 0.0, 0.3)), Vector3::new(1.0, 0.0, 0.0)),
            covariance: diagonal_covariance(0.01, 0.01),
        };
        assert_eq!(update_relpose(&s, &m, &history, &IterationParams::default()), s);
    }

    #[test]
    fn history_lookup_tolerates_rounding() {
        let mut h = PoseHistory::new();
        for k in 0..10 {
            h.push(k as f64 * 0.1, Pose::from_translation(Vector3::new(k as f64, 0.0, 0.0)));
        }
        assert_eq!(h.lookup(0.30000000000000004).unwrap().translation.x, 3.0);
        assert!(h.lookup(0.35).is_none());
        h.prune_before(0.5);
        assert_eq!(h.len(), 5);
        assert!(h.lookup(0.4).is_none());
    }
}
