//! IMU synthesis by differentiating a smooth sensor trajectory.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_log, Timestamp};
use crate::sim::stream_seed;
use crate::sim::trajectory::Trajectory;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: Timestamp,
    /// Body angular rate (rad/s).
    pub gyro: Vector3<f64>,
    /// Specific force (m/s²).
    pub accel: Vector3<f64>,
}

/// Continuous-time noise densities and bias random walks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuModel {
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s²/√Hz
    pub gyro_bias_random_walk: f64,
    /// m/s³/√Hz
    pub accel_bias_random_walk: f64,
    pub gyro_bias_init: [f64; 3],
    pub accel_bias_init: [f64; 3],
    pub rate_hz: f64,
    pub gravity: f64,
}

impl ImuModel {
    /// Noise-free, bias-free model at the given rate.
    pub fn ideal(rate_hz: f64) -> Self {
        Self {
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            gyro_bias_random_walk: 0.0,
            accel_bias_random_walk: 0.0,
            gyro_bias_init: [0.0; 3],
            accel_bias_init: [0.0; 3],
            rate_hz,
            gravity: GRAVITY,
        }
    }

    /// MEMS-grade figures of the kind embedded in small LiDAR units.
    pub fn consumer_mems() -> Self {
        Self {
            gyro_noise_density: 5e-4,
            accel_noise_density: 5e-3,
            gyro_bias_random_walk: 1e-5,
            accel_bias_random_walk: 1e-4,
            gyro_bias_init: [0.002, -0.001, 0.0015],
            accel_bias_init: [0.02, -0.015, 0.01],
            rate_hz: 200.0,
            gravity: GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let densities = [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_random_walk,
            self.accel_bias_random_walk,
        ];
        if densities.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("IMU noise parameters must be >= 0".into()));
        }
        if !(self.rate_hz >= 100.0) {
            return Err(Error::Config(format!(
                "IMU rate must be >= 100 Hz, got {}",
                self.rate_hz
            )));
        }
        if !(self.gravity > 0.0) {
            return Err(Error::Config("gravity magnitude must be positive".into()));
        }
        Ok(())
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }
}

/// Finite-difference step for differentiating the trajectory.
const DIFF_STEP: f64 = 1e-3;

/// Synthesizes IMU samples on `[t0, t1]` at the model rate.
///
/// `accel = Rᵀ(a_world − g_world) + b_a + n_a`, `gyro = ω_body + b_g + n_g`.
/// Noise is white with standard deviation `density·√rate`; biases follow a
/// random walk starting at the configured initial values.
pub fn synthesize_imu<T: Trajectory + ?Sized>(
    sensor: &T,
    t0: Timestamp,
    t1: Timestamp,
    model: &ImuModel,
    seed: u64,
    stream: u64,
) -> Vec<ImuSample> {
    let h = DIFF_STEP;
    let dt = 1.0 / model.rate_hz;
    let n = ((t1 - t0) * model.rate_hz).round() as usize + 1;
    let g = model.gravity_vector();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, stream, u64::MAX));
    let mut gauss = || -> Vector3<f64> {
        Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        )
    };
    let mut bg = Vector3::from(model.gyro_bias_init);
    let mut ba = Vector3::from(model.accel_bias_init);
    let sqrt_rate = model.rate_hz.sqrt();
    let sqrt_dt = dt.sqrt();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        let (pm, p0, pp) = (sensor.pose(t - h), sensor.pose(t), sensor.pose(t + h));
        let a_world = (pp.translation - 2.0 * p0.translation + pm.translation) / (h * h);
        let omega = so3_log(&(pm.rotation.inverse() * pp.rotation)) / (2.0 * h);
        let mut accel = p0.rotation.inverse() * (a_world - g) + ba;
        let mut gyro = omega + bg;
        // draws happen unconditionally so streams line up across noise toggles
        let (ng, na, wg, wa) = (gauss(), gauss(), gauss(), gauss());
        gyro += ng * (model.gyro_noise_density * sqrt_rate);
        accel += na * (model.accel_noise_density * sqrt_rate);
        bg += wg * (model.gyro_bias_random_walk * sqrt_dt);
        ba += wa * (model.accel_bias_random_walk * sqrt_dt);
        out.push(ImuSample { t, gyro, accel });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_z, Pose};

    #[test]
    fn stationary_reads_gravity_reaction() {
        let still = |_: f64| Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let imu = synthesize_imu(&still, 0.0, 1.0, &ImuModel::ideal(200.0), 1, 0);
        assert_eq!(imu.len(), 201);
        for s in &imu {
            assert!((s.accel - Vector3::new(0.0, 0.0, 9.81)).norm() < 1e-9);
            assert!(s.gyro.norm() < 1e-12);
        }
    }

    #[test]
    fn constant_spin_reads_rate() {
        let spin = |t: f64| Pose::from_rotation(rot_z(t));
        for s in synthesize_imu(&spin, 0.0, 2.0, &ImuModel::ideal(200.0), 1, 0) {
            assert!((s.gyro - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn circular_orbit_centripetal_acceleration() {
        // body frame keeps its x axis tangent: a = ω²r points to the center,
        // i.e. along body -y for a counter-clockwise orbit with heading t + π/2
        let orbit = |t: f64| {
            Pose::new(
                rot_z(t + std::f64::consts::FRAC_PI_2),
                Vector3::new(t.cos(), t.sin(), 0.0),
            )
        };
        for s in synthesize_imu(&orbit, 0.0, 3.0, &ImuModel::ideal(200.0), 1, 0) {
            let horizontal = Vector3::new(s.accel.x, s.accel.y, 0.0);
            assert!((horizontal.norm() - 1.0).abs() < 1e-6, "{}", horizontal.norm());
            assert!((s.accel.y - 1.0).abs() < 1e-6);
            assert!((s.accel.z - 9.81).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let still = |_: f64| Pose::identity();
        let mut model = ImuModel::ideal(200.0);
        model.gyro_noise_density = 1e-3;
        let a = synthesize_imu(&still, 0.0, 50.0, &model, 9, 0);
        let b = synthesize_imu(&still, 0.0, 50.0, &model, 9, 0);
        assert_eq!(a, b);
        let var = a.iter().map(|s| s.gyro.x * s.gyro.x).sum::<f64>() / a.len() as f64;
        let expected = 1e-6 * 200.0;
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
    }

    #[test]
    fn invalid_model() {
        let mut m = ImuModel::ideal(50.0);
        assert!(m.validate().is_err());
        m.rate_hz = 200.0;
        m.gyro_noise_density = -1.0;
        assert!(m.validate().is_err());
    }
}
