//! Error-state iterated Kalman filter over the state
//! `[p, R, v, b_g, b_a, g]` with a right-perturbation rotation error.

mod lidar;
mod relpose;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::deskew::{integration_steps, strapdown_step, PropagatedSegment};
use crate::error::Result;
use crate::geometry::{hat, so3_exp, so3_log, so3_right_jacobian, Pose, Rotation, Timestamp};
use crate::sim::imu::{ImuModel, ImuSample, GRAVITY};

pub use lidar::{update_lidar, LidarParams, UpdateReport};
pub use relpose::{update_relpose, PoseHistory};

pub const STATE_DIM: usize = 18;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type ErrorVector = SVector<f64, STATE_DIM>;

/// Offsets of each block in the error state.
pub mod idx {
    pub const POS: usize = 0;
    pub const ROT: usize = 3;
    pub const VEL: usize = 6;
    pub const BG: usize = 9;
    pub const BA: usize = 12;
    pub const GRAV: usize = 15;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: Timestamp,
    pub position: Vector3<f64>,
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub cov: StateMatrix,
}

impl FilterState {
    /// At rest at `pose`, zero biases, nominal gravity, zero covariance.
    pub fn at_pose(t: Timestamp, pose: Pose) -> Self {
        Self {
            t,
            position: pose.translation,
            rotation: pose.rotation,
            velocity: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
            cov: StateMatrix::zeros(),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }

    /// `self ⊞ dx`.
    pub fn boxplus(&self, dx: &ErrorVector) -> Self {
        let v3 = |i: usize| Vector3::new(dx[i], dx[i + 1], dx[i + 2]);
        let mut out = self.clone();
        out.position += v3(idx::POS);
        out.rotation = self.rotation * so3_exp(&v3(idx::ROT));
        out.rotation.renormalize();
        out.velocity += v3(idx::VEL);
        out.gyro_bias += v3(idx::BG);
        out.accel_bias += v3(idx::BA);
        out.gravity += v3(idx::GRAV);
        out
    }

    /// `self ⊟ other`, so that `other ⊞ (self ⊟ other) = self`.
    pub fn boxminus(&self, other: &FilterState) -> ErrorVector {
        let mut dx = ErrorVector::zeros();
        let mut put = |i: usize, v: Vector3<f64>| dx.fixed_rows_mut::<3>(i).copy_from(&v);
        put(idx::POS, self.position - other.position);
        put(idx::ROT, so3_log(&(other.rotation.inverse() * self.rotation)));
        put(idx::VEL, self.velocity - other.velocity);
        put(idx::BG, self.gyro_bias - other.gyro_bias);
        put(idx::BA, self.accel_bias - other.accel_bias);
        put(idx::GRAV, self.gravity - other.gravity);
        dx
    }

    pub fn symmetrize(&mut self) {
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
    }
}

/// Continuous-time noise densities driving the covariance prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise {
    pub gyro: f64,
    pub accel: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl ProcessNoise {
    pub fn zero() -> Self {
        Self {
            gyro: 0.0,
            accel: 0.0,
            gyro_bias: 0.0,
            accel_bias: 0.0,
        }
    }
}

impl From<&ImuModel> for ProcessNoise {
    fn from(m: &ImuModel) -> Self {
        Self {
            gyro: m.gyro_noise_density,
            accel: m.accel_noise_density,
            gyro_bias: m.gyro_bias_random_walk,
            accel_bias: m.accel_bias_random_walk,
        }
    }
}

/// Initial standard deviations per state block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialSigma {
    pub position: f64,
    pub rotation: f64,
    pub velocity: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
    pub gravity: f64,
}

impl Default for InitialSigma {
    fn default() -> Self {
        Self {
            position: 1e-3,
            rotation: 1e-3,
            velocity: 1e-2,
            gyro_bias: 5e-3,
            accel_bias: 5e-2,
            gravity: 1e-3,
        }
    }
}

impl InitialSigma {
    pub fn covariance(&self) -> StateMatrix {
        let mut p = StateMatrix::zeros();
        for (i, s) in [
            self.position,
            self.rotation,
            self.velocity,
            self.gyro_bias,
            self.accel_bias,
            self.gravity,
        ]
        .into_iter()
        .enumerate()
        {
            for k in 0..3 {
                p[(3 * i + k, 3 * i + k)] = s * s;
            }
        }
        p
    }
}

fn set_block(m: &mut StateMatrix, r: usize, c: usize, b: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(r, c).copy_from(b);
}

/// Propagates the nominal state and covariance from `state.t` to `t_end`
/// with the IMU samples, returning the new state together with the pose
/// segment used for deskewing.
pub fn predict(
    state: &FilterState,
    imu: &[ImuSample],
    t_end: Timestamp,
    noise: &ProcessNoise,
) -> Result<(FilterState, PropagatedSegment)> {
    let steps = integration_steps(imu, state.t, t_end)?;
    let mut s = state.clone();
    let mut samples = Vec::with_capacity(steps.len() + 1);
    samples.push((s.t, s.pose()));
    let i3 = Matrix3::identity();
    for step in &steps {
        let dt = step.dt;
        let w = step.gyro - s.gyro_bias;
        let a = step.accel - s.accel_bias;
        let rot_mid = (s.rotation * so3_exp(&(w * (0.5 * dt))))
            .to_rotation_matrix()
            .into_inner();

        let mut f = StateMatrix::identity();
        set_block(&mut f, idx::POS, idx::VEL, &(i3 * dt));
        set_block(
            &mut f,
            idx::ROT,
            idx::ROT,
            &so3_exp(&(-w * dt)).to_rotation_matrix().into_inner(),
        );
        set_block(&mut f, idx::ROT, idx::BG, &(-so3_right_jacobian(&(w * dt)) * dt));
        set_block(&mut f, idx::VEL, idx::ROT, &(-rot_mid * hat(&a) * dt));
        set_block(&mut f, idx::VEL, idx::BA, &(-rot_mid * dt));
        set_block(&mut f, idx::VEL, idx::GRAV, &(i3 * dt));

        let mut q = StateMatrix::zeros();
        set_block(&mut q, idx::ROT, idx::ROT, &(i3 * (noise.gyro * noise.gyro * dt)));
        set_block(&mut q, idx::VEL, idx::VEL, &(i3 * (noise.accel * noise.accel * dt)));
        set_block(
            &mut q,
            idx::BG,
            idx::BG,
            &(i3 * (noise.gyro_bias * noise.gyro_bias * dt)),
        );
        set_block(
            &mut q,
            idx::BA,
            idx::BA,
            &(i3 * (noise.accel_bias * noise.accel_bias * dt)),
        );

        s.cov = f * s.cov * f.transpose() + q;
        strapdown_step(&mut s, step);
        samples.push((s.t, s.pose()));
    }
    s.t = t_end;
    if let Some(last) = samples.last_mut() {
        last.0 = t_end;
    }
    s.symmetrize();
    Ok((s, PropagatedSegment { samples }))
}

/// Information-form contribution of a measurement linearized at an iterate:
/// `A = HᵀR⁻¹H`, `b = HᵀR⁻¹r`.
#[derive(Debug, Clone)]
pub struct Information {
    pub a: StateMatrix,
    pub b: ErrorVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationParams {
    pub max_iterations: usize,
    /// Stop once the correction norm drops below this.
    pub tolerance: f64,
}

impl Default for IterationParams {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IteratedOutcome {
    pub state: FilterState,
    /// Linearizations that contributed to the final estimate.
    pub iterations: usize,
}

/// Iterated update. At each iterate `x_k` the measurement supplies its
/// information; the step solves
/// `(I + P A) δ = −(x_k ⊟ x̂ + P b)` and the posterior covariance is
/// `(I + P A)⁻¹ P` at the last linearization. This equals the Kalman form
/// `(I − K H) P` but stays well defined for singular `P`.
///
/// Returns `None` when the first linearization is rejected by `measure`.
pub fn iterated_update<F>(prior: &FilterState, params: &IterationParams, mut measure: F) -> Option<IteratedOutcome>
where
    F: FnMut(&FilterState) -> Option<Information>,
{
    let p = prior.cov;
    let mut x = prior.clone();
    let mut posterior_cov = None;
    let mut iterations = 0;
    for _ in 0..params.max_iterations.max(1) {
        let Some(info) = measure(&x) else {
            break;
        };
        let m = StateMatrix::identity() + p * info.a;
        let Some(lu_inv) = m.try_inverse() else {
            break;
        };
        let x_tilde = x.boxminus(prior);
        let dx = -(lu_inv * (x_tilde + p * info.b));
        x = x.boxplus(&dx);
        posterior_cov = Some(lu_inv * p);
        iterations += 1;
        if dx.norm() < params.tolerance {
            break;
        }
    }
    let cov = posterior_cov?;
    x.cov = cov;
    x.symmetrize();
    Some(IteratedOutcome { state: x, iterations })
}
