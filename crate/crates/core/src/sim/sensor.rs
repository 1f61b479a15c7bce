//! Sensor presets and body mount configurations.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanPattern {
    /// Time-of-flight camera: one frame captured at a single instant.
    Raster,
    /// Rotating multi-beam LiDAR.
    Spinning { channels: u32 },
    /// Livox-style coverage, modeled as two incommensurate angular sweeps.
    NonRepetitiveConical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPreset {
    pub name: String,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    /// Elevation of the vertical FoV center above the sensor xy-plane.
    pub vcenter_deg: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub points_per_second: f64,
    pub scan_period: f64,
    pub pattern: ScanPattern,
}

impl SensorPreset {
    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f <= 360.0;
        if !fov_ok(self.hfov_deg) || !fov_ok(self.vfov_deg) {
            return Err(Error::Config(format!("preset {}: FoV out of (0, 360]", self.name)));
        }
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return Err(Error::Config(format!(
                "preset {}: need 0 < min_range < max_range",
                self.name
            )));
        }
        if !(self.points_per_second > 0.0 && self.scan_period > 0.0) {
            return Err(Error::Config(format!(
                "preset {}: rate and period must be positive",
                self.name
            )));
        }
        if let ScanPattern::Spinning { channels } = self.pattern {
            if channels < 2 {
                return Err(Error::Config(format!(
                    "preset {}: spinning needs >= 2 channels",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Points per scan: points-per-second times scan period.
    pub fn points_per_scan(&self) -> usize {
        (self.points_per_second * self.scan_period).round() as usize
    }

    pub fn is_tof(&self) -> bool {
        self.pattern == ScanPattern::Raster
    }

    pub fn with_points_per_second(mut self, pps: f64) -> Self {
        self.points_per_second = pps;
        self
    }
}

/// Built-in presets. `l515` and `kinect` are the two ToF cameras, `mid360`
/// the solid-state LiDAR, `spin16` a generic spinning LiDAR.
pub fn preset(name: &str) -> Result<SensorPreset> {
    let p = match name {
        "l515" => SensorPreset {
            name: name.into(),
            hfov_deg: 70.0,
            vfov_deg: 55.0,
            vcenter_deg: 0.0,
            min_range: 0.25,
            max_range: 9.0,
            points_per_second: 72_000.0,
            scan_period: 1.0 / 15.0,
            pattern: ScanPattern::Raster,
        },
        "kinect" => SensorPreset {
            name: name.into(),
            hfov_deg: 120.0,
            vfov_deg: 120.0,
            vcenter_deg: 0.0,
            min_range: 0.25,
            max_range: 5.5,
            points_per_second: 61_440.0,
            scan_period: 1.0 / 15.0,
            pattern: ScanPattern::Raster,
        },
        "mid360" => SensorPreset {
            name: name.into(),
            hfov_deg: 360.0,
            vfov_deg: 59.0,
            vcenter_deg: 22.5,
            min_range: 0.1,
            max_range: 40.0,
            points_per_second: 200_000.0,
            scan_period: 0.1,
            pattern: ScanPattern::NonRepetitiveConical,
        },
        "spin16" => SensorPreset {
            name: name.into(),
            hfov_deg: 360.0,
            vfov_deg: 30.0,
            vcenter_deg: 0.0,
            min_range: 0.5,
            max_range: 100.0,
            points_per_second: 163_840.0,
            scan_period: 0.1,
            pattern: ScanPattern::Spinning { channels: 16 },
        },
        other => return Err(Error::Config(format!("unknown sensor preset {other:?}"))),
    };
    Ok(p)
}

pub const PRESET_NAMES: [&str; 4] = ["l515", "kinect", "mid360", "spin16"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attachment {
    Helmet,
    Chest,
    Shoulder,
}

/// Angular wobble of a non-rigid (velcro) attachment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwayModel {
    /// Per-axis amplitude of the gait-synchronous oscillation (rad).
    pub amplitude: [f64; 3],
    /// Per-axis frequency (Hz).
    pub frequency: [f64; 3],
    /// Amplitude of the slow random drift (rad).
    pub drift_amplitude: f64,
}

impl Default for SwayModel {
    fn default() -> Self {
        let a = 5f64.to_radians();
        Self {
            amplitude: [a, a, a],
            frequency: [2.0, 2.0, 2.0],
            drift_amplitude: 1f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MountConfig {
    pub name: String,
    pub attachment: Attachment,
    /// Nominal body-to-sensor transform.
    pub offset: Pose,
    pub sway: Option<SwayModel>,
}

impl MountConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attachment == Attachment::Helmet && self.sway.is_some() {
            return Err(Error::Config(format!(
                "mount {}: helmet mounts are rigid and cannot sway",
                self.name
            )));
        }
        Ok(())
    }

    /// Sway rotation at time `t`. `activity` in [0, 1] scales the
    /// gait-synchronous part; `phases` holds 3 oscillation and 4 drift phases.
    pub fn sway_rotation(&self, t: f64, activity: f64, phases: &[f64; 7]) -> Pose {
        let Some(s) = &self.sway else {
            return Pose::identity();
        };
        let mut w = Vector3::zeros();
        for i in 0..3 {
            w[i] = activity * s.amplitude[i] * (2.0 * PI * s.frequency[i] * t + phases[i]).sin();
        }
        // slow drift: two incommensurate low-frequency components
        let drift = Vector3::new(
            (2.0 * PI * 0.071 * t + phases[3]).sin(),
            (2.0 * PI * 0.053 * t + phases[4]).sin(),
            (2.0 * PI * 0.089 * t + phases[5]).sin() * (2.0 * PI * 0.031 * t + phases[6]).cos(),
        );
        w += drift * s.drift_amplitude;
        Pose::from_rotation(so3_exp(&w))
    }
}

/// Built-in mounts. The body frame is the head center, x forward, z up.
pub fn mount(name: &str) -> Result<MountConfig> {
    let pitch = |deg: f64| so3_exp(&Vector3::new(0.0, deg.to_radians(), 0.0));
    let m = match name {
        "helmet-horizontal" => MountConfig {
            name: name.into(),
            attachment: Attachment::Helmet,
            offset: Pose::from_translation(Vector3::new(0.0, 0.0, 0.15)),
            sway: None,
        },
        "helmet-tilted" => MountConfig {
            name: name.into(),
            attachment: Attachment::Helmet,
            offset: Pose::new(pitch(20.0), Vector3::new(0.05, 0.0, 0.15)),
            sway: None,
        },
        "helmet-front" => MountConfig {
            name: name.into(),
            attachment: Attachment::Helmet,
            offset: Pose::new(pitch(10.0), Vector3::new(0.12, 0.0, 0.05)),
            sway: None,
        },
        "shoulder" => MountConfig {
            name: name.into(),
            attachment: Attachment::Shoulder,
            offset: Pose::from_translation(Vector3::new(0.0, -0.2, -0.25)),
            sway: Some(SwayModel::default()),
        },
        "chest" => MountConfig {
            name: name.into(),
            attachment: Attachment::Chest,
            offset: Pose::new(pitch(90.0), Vector3::new(0.15, -0.2, -0.55)),
            sway: Some(SwayModel::default()),
        },
        other => return Err(Error::Config(format!("unknown mount {other:?}"))),
    };
    Ok(m)
}

pub const MOUNT_NAMES: [&str; 5] = [
    "helmet-horizontal",
    "helmet-tilted",
    "helmet-front",
    "shoulder",
    "chest",
];
