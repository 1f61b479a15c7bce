//! Ray-cast LiDAR / ToF scans with per-point capture times.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, Timestamp};
use crate::sim::scene::Scene;
use crate::sim::sensor::{ScanPattern, SensorPreset};
use crate::sim::stream_seed;
use crate::sim::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub t: Timestamp,
    /// Sensor-frame coordinates at capture time.
    pub p: Point3,
    /// Ground-truth surface that produced the return.
    pub surface_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub t0: Timestamp,
    pub t1: Timestamp,
    pub points: Vec<ScanPoint>,
}

impl ScanRecord {
    /// True when every point shares one capture time (ToF frames).
    pub fn is_instantaneous(&self) -> bool {
        self.points.windows(2).all(|w| w[0].t == w[1].t)
    }
}

/// Additive Gaussian range noise along each ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeNoise {
    pub sigma: f64,
    pub seed: u64,
    /// Distinguishes sensors sharing a seed.
    pub stream: u64,
}

impl RangeNoise {
    pub fn none() -> Self {
        Self {
            sigma: 0.0,
            seed: 0,
            stream: 0,
        }
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const SQRT2_FRAC: f64 = 0.414_213_562_373_095_1;

fn direction(az: f64, el: f64) -> Vector3<f64> {
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Capture time offsets (fraction of the scan period) and sensor-frame unit
/// directions for one scan, in firing order.
pub fn scan_directions(preset: &SensorPreset, scan_index: u64) -> Vec<(f64, Vector3<f64>)> {
    let n = preset.points_per_scan().max(1);
    let h = preset.hfov_deg.to_radians();
    let v = preset.vfov_deg.to_radians();
    let vc = preset.vcenter_deg.to_radians();
    match preset.pattern {
        ScanPattern::Raster => {
            let aspect = preset.hfov_deg / preset.vfov_deg;
            let cols = ((n as f64 * aspect).sqrt().round() as usize).max(1);
            let rows = (n / cols).max(1);
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let el = vc + v * (0.5 - (r as f64 + 0.5) / rows as f64);
                for c in 0..cols {
                    let az = h * (0.5 - (c as f64 + 0.5) / cols as f64);
                    out.push((1.0, direction(az, el)));
                }
            }
            out
        }
        ScanPattern::Spinning { channels } => {
            let channels = channels as usize;
            let cols = (n / channels).max(1);
            let total = (cols * channels) as f64;
            let mut out = Vec::with_capacity(cols * channels);
            for c in 0..cols {
                let az = h * (c as f64 / cols as f64) - if h >= TAU { 0.0 } else { 0.5 * h };
                for ch in 0..channels {
                    let el = vc - 0.5 * v + v * ch as f64 / (channels - 1) as f64;
                    out.push(((c * channels + ch) as f64 / total, direction(az, el)));
                }
            }
            out
        }
        ScanPattern::NonRepetitiveConical => {
            let base = scan_index * n as u64;
            (0..n)
                .map(|k| {
                    let g = (base + k as u64) as f64;
                    let a = (g * GOLDEN).fract();
                    let b = (g * SQRT2_FRAC).fract();
                    let dir = if preset.hfov_deg >= 360.0 {
                        let tri = 1.0 - (2.0 * b - 1.0).abs();
                        direction(TAU * a, vc - 0.5 * v + v * tri)
                    } else {
                        // rosette petals filling the cone
                        let r = (std::f64::consts::PI * a).sin();
                        let th = TAU * b;
                        direction(0.5 * h * r * th.cos(), vc + 0.5 * v * r * th.sin())
                    };
                    (k as f64 / n as f64, dir)
                })
                .collect()
        }
    }
}

/// Scan start and end times for the given index.
pub fn scan_interval(preset: &SensorPreset, scan_index: u64) -> (Timestamp, Timestamp) {
    let t0 = scan_index as f64 * preset.scan_period;
    let t1 = (scan_index + 1) as f64 * preset.scan_period;
    if preset.is_tof() {
        (t1, t1)
    } else {
        (t0, t1)
    }
}

/// Casts one scan. Each point is the nearest surface hit along its ray,
/// expressed in the sensor frame at its own capture time; misses and
/// returns outside `[min_range, max_range]` are dropped.
pub fn cast_scan<T: Trajectory + ?Sized>(
    scene: &Scene,
    sensor: &T,
    preset: &SensorPreset,
    scan_index: u64,
    noise: &RangeNoise,
) -> ScanRecord {
    let (t0, t1) = scan_interval(preset, scan_index);
    let dirs = scan_directions(preset, scan_index);
    let hits: Vec<_> = dirs
        .par_iter()
        .map(|(frac, dir)| {
            let t = if preset.is_tof() { t1 } else { t0 + frac * (t1 - t0) };
            let pose = sensor.pose(t);
            let world_dir = pose.rotation * dir;
            scene
                .raycast(&pose.translation, &world_dir, preset.max_range)
                .map(|hit| (t, *dir, hit.range, hit.surface_id))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(noise.seed, noise.stream, scan_index));
    let normal = Normal::new(0.0, noise.sigma.max(0.0)).expect("finite sigma");
    let mut points = Vec::with_capacity(hits.len());
    for (t, dir, range, surface_id) in hits.into_iter().flatten() {
        let range = if noise.sigma > 0.0 {
            range + normal.sample(&mut rng)
        } else {
            range
        };
        if range < preset.min_range || range > preset.max_range {
            continue;
        }
        points.push(ScanPoint {
            t,
            p: dir * range,
            surface_id,
        });
    }
    ScanRecord { t0, t1, points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::sim::scene::build::{aabb, patch};
    use crate::sim::sensor::preset;

    fn wall_at(x: f64) -> Scene {
        Scene::new(
            vec![],
            vec![patch(1, [x, -100.0, -100.0], [0.0, 200.0, 0.0], [0.0, 0.0, 200.0])],
        )
        .unwrap()
    }

    fn static_pose(_: f64) -> Pose {
        Pose::identity()
    }

    #[test]
    fn forward_ray_hits_plane_directly() {
        let scene = wall_at(5.0);
        let hit = scene.raycast(&Vector3::zeros(), &Vector3::x(), 40.0).unwrap();
        assert_eq!(Vector3::x() * hit.range, Vector3::new(5.0, 0.0, 0.0));
        // ToF preset has a ray near the optical axis
        let scan = cast_scan(&scene, &static_pose, &preset("l515").unwrap(), 0, &RangeNoise::none());
        assert!(!scan.points.is_empty());
        assert!(scan.points.iter().all(|p| (p.p.x - 5.0).abs() < 1e-12));
    }

    #[test]
    fn mid360_range_gate_drops_far_plane() {
        let scan = cast_scan(
            &wall_at(50.0),
            &static_pose,
            &preset("mid360").unwrap(),
            0,
            &RangeNoise::none(),
        );
        assert!(scan.points.is_empty());
        let scan = cast_scan(
            &wall_at(30.0),
            &static_pose,
            &preset("mid360").unwrap(),
            0,
            &RangeNoise::none(),
        );
        assert!(!scan.points.is_empty());
    }

    #[test]
    fn timestamps_follow_pattern_type() {
        let room = Scene::new(vec![aabb(1, [-10.0, -10.0, -3.0], [10.0, 10.0, 5.0])], vec![]).unwrap();
        let tof = cast_scan(&room, &static_pose, &preset("kinect").unwrap(), 3, &RangeNoise::none());
        assert!(tof.is_instantaneous());
        assert_eq!(tof.t0, tof.t1);
        for name in ["mid360", "spin16"] {
            let scan = cast_scan(&room, &static_pose, &preset(name).unwrap(), 3, &RangeNoise::none());
            assert!(scan.points.windows(2).all(|w| w[0].t < w[1].t), "{name}");
            assert!(scan.points.iter().all(|p| p.t >= scan.t0 && p.t <= scan.t1));
        }
    }

    #[test]
    fn mid360_budget_and_elevation_band() {
        let p = preset("mid360").unwrap();
        let dirs = scan_directions(&p, 0);
        assert_eq!(dirs.len(), 20_000);
        for (_, d) in &dirs {
            let el = d.z.asin().to_degrees();
            assert!((-7.0 - 1e-9..=52.0 + 1e-9).contains(&el));
        }
        assert_ne!(scan_directions(&p, 1)[0].1, dirs[0].1);
    }

    #[test]
    fn moving_sensor_sees_wall_point_shift() {
        // sensor moving +x at 1 m/s towards a wall at x = 10
        let scene = wall_at(10.0);
        let traj = |t: f64| Pose::from_translation(Vector3::new(t, 0.0, 0.0));
        let scan = cast_scan(&scene, &traj, &preset("spin16").unwrap(), 0, &RangeNoise::none());
        for p in &scan.points {
            // x coordinate in the sensor frame is the wall distance at capture time
            assert!((p.p.x - (10.0 - p.t)).abs() < 1e-9);
        }
        let first = scan.points.first().unwrap();
        let last = scan.points.last().unwrap();
        assert!((first.p.x - last.p.x - (last.t - first.t)).abs() < 1e-9);
    }

    #[test]
    fn noise_is_deterministic_and_stream_dependent() {
        let room = Scene::new(vec![aabb(1, [-10.0, -10.0, -3.0], [10.0, 10.0, 5.0])], vec![]).unwrap();
        let p = preset("spin16").unwrap();
        let n = RangeNoise {
            sigma: 0.02,
            seed: 4,
            stream: 0,
        };
        let a = cast_scan(&room, &static_pose, &p, 2, &n);
        let b = cast_scan(&room, &static_pose, &p, 2, &n);
        assert_eq!(a, b);
        let c = cast_scan(&room, &static_pose, &p, 2, &RangeNoise { stream: 1, ..n });
        assert_ne!(a, c);
    }
}
