//! Rigid-body primitives shared by every stage of the pipeline.
//!
//! Conventions: right-handed, z-up world frame; sensor frames are x-forward,
//! y-left, z-up. Orientation errors are applied on the right, i.e.
//! `R_true = R_nominal * exp(dtheta)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time in seconds.
pub type Timestamp = f64;

/// A 3D point in meters. Points and free vectors share the same storage.
pub type Point3 = Vector3<f64>;

/// Unit quaternion rotation.
pub type Rotation = UnitQuaternion<f64>;

/// Angles below this use the Taylor branch of exp/log.
const SMALL_ANGLE: f64 = 1e-8;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from a rotation vector (radians) to a unit quaternion.
pub fn so3_exp(omega: &Vector3<f64>) -> Rotation {
    let theta = omega.norm();
    if theta < SMALL_ANGLE {
        let q = Quaternion::new(1.0, 0.5 * omega.x, 0.5 * omega.y, 0.5 * omega.z);
        return UnitQuaternion::new_normalize(q);
    }
    let half = 0.5 * theta;
    let s = half.sin() / theta;
    UnitQuaternion::new_unchecked(Quaternion::new(half.cos(), s * omega.x, s * omega.y, s * omega.z))
}

/// Result of the logarithm map, flagged when the rotation sits at angle pi
/// where the axis sign is ambiguous.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationLog {
    pub vector: Vector3<f64>,
    pub at_pi: bool,
}

/// Logarithm map with the angle-pi case reported instead of hidden.
pub fn so3_log_checked(r: &Rotation) -> RotationLog {
    let q = canonical(r);
    let (w, v) = (q.w, q.imag());
    let s = v.norm();
    if s < SMALL_ANGLE {
        // theta/sin(theta/2) ~ 2/w * (1 - s^2 / (3 w^2))
        let scale = 2.0 / w * (1.0 - s * s / (3.0 * w * w));
        return RotationLog {
            vector: v * scale,
            at_pi: false,
        };
    }
    let theta = 2.0 * s.atan2(w);
    RotationLog {
        vector: v * (theta / s),
        at_pi: w.abs() < 1e-12,
    }
}

/// Logarithm map to a rotation vector with angle in [0, pi].
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    so3_log_checked(r).vector
}

/// Right Jacobian of SO(3).
pub fn so3_right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    if theta < 1e-6 {
        return Matrix3::identity() - 0.5 * w + w * w / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - (1.0 - theta.cos()) / t2 * w + (theta - theta.sin()) / (t2 * theta) * w * w
}

/// Inverse of the right Jacobian of SO(3).
pub fn so3_right_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * w + w * w / 12.0;
    }
    let t2 = theta * theta;
    let coeff = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * w + coeff * w * w
}

/// Quaternion with the double cover resolved to `w >= 0`.
pub fn canonical(r: &Rotation) -> Rotation {
    if r.w < 0.0 {
        UnitQuaternion::new_unchecked(-r.into_inner())
    } else {
        *r
    }
}

/// Rigid-body transform mapping points from a child frame into a parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// Rotation given as a rotation vector plus translation.
    pub fn from_parts(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(so3_exp(&omega), translation)
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = UnitQuaternion::new_normalize((self.rotation * other.rotation).into_inner());
        Pose::new(rotation, self.rotation * other.translation + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.rotation.inverse();
        Pose::new(rinv, -(rinv * self.translation))
    }

    /// `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    /// Applies a right-hand error perturbation `(dp, dtheta)`.
    pub fn perturbed(&self, dp: &Vector3<f64>, dtheta: &Vector3<f64>) -> Pose {
        let rotation = UnitQuaternion::new_normalize((self.rotation * so3_exp(dtheta)).into_inner());
        Pose::new(rotation, self.translation + dp)
    }

    /// Translation distance and rotation angle (radians) between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let d = self.between(other);
        (
            (self.translation - other.translation).norm(),
            so3_log(&d.rotation).norm(),
        )
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Spherical interpolation on the shortest arc: `a * exp(s * log(a⁻¹ b))`.
pub fn slerp(a: &Rotation, b: &Rotation, s: f64) -> Rotation {
    let delta = so3_log(&(a.inverse() * b));
    UnitQuaternion::new_normalize((a * so3_exp(&(delta * s))).into_inner())
}

/// Pose at `t` between `(t0, p0)` and `(t1, p1)`: linear in translation,
/// slerp in rotation. Endpoints are returned unchanged.
pub fn interpolate(p0: &Pose, t0: Timestamp, p1: &Pose, t1: Timestamp, t: Timestamp) -> Result<Pose> {
    if !(t0 < t1) || !(t0..=t1).contains(&t) {
        return Err(Error::Precondition(format!(
            "interpolation time {t} outside [{t0}, {t1}]"
        )));
    }
    if t == t0 {
        return Ok(*p0);
    }
    if t == t1 {
        return Ok(*p1);
    }
    let s = (t - t0) / (t1 - t0);
    Ok(Pose::new(
        slerp(&p0.rotation, &p1.rotation, s),
        p0.translation + (p1.translation - p0.translation) * s,
    ))
}

/// Rotation about the world z axis.
pub fn rot_z(angle: f64) -> Rotation {
    so3_exp(&Vector3::new(0.0, 0.0, angle))
}

pub fn rot_y(angle: f64) -> Rotation {
    so3_exp(&Vector3::new(0.0, angle, 0.0))
}

pub fn rot_x(angle: f64) -> Rotation {
    so3_exp(&Vector3::new(angle, 0.0, 0.0))
}

/// Roll-pitch-yaw (applied as `Rz(yaw) * Ry(pitch) * Rx(roll)`).
pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Rotation {
    rot_z(yaw) * rot_y(pitch) * rot_x(roll)
}
