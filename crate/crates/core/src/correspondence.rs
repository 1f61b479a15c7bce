//! Point-to-plane data association shared by the filter update and ICP.

use nalgebra::{Matrix3, Matrix6, RowVector6, SymmetricEigen, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{hat, Point3, Pose};
use crate::voxel_map::{fit_plane, VoxelMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Neighbors used per plane fit.
    pub k: usize,
    /// Neighbors farther than this from the query are ignored.
    pub search_radius: f64,
    /// RMS bound for a plane fit to count as valid.
    pub plane_threshold: f64,
    /// Every neighbor must lie within this distance of the fitted plane.
    pub plane_max_residual: f64,
    /// Residuals with larger magnitude are discarded.
    pub outlier_gate: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            k: 20,
            search_radius: 1.0,
            plane_threshold: 0.1,
            plane_max_residual: 0.1,
            outlier_gate: 0.1,
        }
    }
}

/// One point-to-plane residual `r = n·(R p + t) + d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMatch {
    /// Point in the sensor frame.
    pub point: Point3,
    pub normal: Vector3<f64>,
    pub d: f64,
    pub residual: f64,
}

impl PointMatch {
    /// Derivative of the residual with respect to a right perturbation
    /// `(δp, δθ)` of `pose`: `[nᵀ, −nᵀ R [p]×]`.
    pub fn jacobian(&self, rotation: &Matrix3<f64>) -> RowVector6<f64> {
        let rot_part = -(self.normal.transpose() * rotation * hat(&self.point));
        RowVector6::new(
            self.normal.x,
            self.normal.y,
            self.normal.z,
            rot_part[0],
            rot_part[1],
            rot_part[2],
        )
    }
}

/// Associates every sensor-frame point, placed by `pose`, with a plane fitted
/// through its map neighbors. Order of the output follows the input.
pub fn match_points(points: &[Point3], pose: &Pose, map: &VoxelMap, params: &MatchParams) -> Vec<PointMatch> {
    points
        .par_iter()
        .with_min_len(64)
        .filter_map(|p| {
            let w = pose.apply(p);
            let neighbors = map.knn(&w, params.k, params.search_radius);
            if neighbors.len() < params.k {
                return None;
            }
            let pts: Vec<Point3> = neighbors.iter().map(|n| n.point).collect();
            let plane = fit_plane(&pts, params.plane_threshold);
            if !plane.valid || plane.max_residual > params.plane_max_residual {
                return None;
            }
            let residual = plane.signed_distance(&w);
            (residual.abs() <= params.outlier_gate).then_some(PointMatch {
                point: *p,
                normal: plane.normal,
                d: plane.d,
                residual,
            })
        })
        .collect()
}

/// Unweighted normal equations `HᵀH`, `Hᵀr` over the pose block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalEquations {
    pub hth: Matrix6<f64>,
    pub htr: Vector6<f64>,
    pub sum_sq: f64,
    pub count: usize,
}

impl NormalEquations {
    pub fn build(matches: &[PointMatch], pose: &Pose) -> Self {
        let rot = pose.rotation_matrix();
        let mut hth = Matrix6::zeros();
        let mut htr = Vector6::zeros();
        let mut sum_sq = 0.0;
        for m in matches {
            let h = m.jacobian(&rot);
            hth += h.transpose() * h;
            htr += h.transpose() * m.residual;
            sum_sq += m.residual * m.residual;
        }
        Self {
            hth,
            htr,
            sum_sq,
            count: matches.len(),
        }
    }

    pub fn rms(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            (self.sum_sq / self.count as f64).sqrt()
        }
    }

    /// Smallest eigenvalue of `HᵀH`, the degeneracy metric: a direction the
    /// residuals do not constrain shows up as a near-zero eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.hth).eigenvalues.min()
    }
}

/// Voxel-grid downsampling: per occupied `leaf`-sized cell, the input point
/// nearest the cell centroid, in order of first occurrence. Keeping a
/// measured point rather than the centroid itself keeps cells that straddle
/// an edge or corner on a surface.
pub fn downsample(points: &[Point3], leaf: f64) -> Vec<Point3> {
    if leaf <= 0.0 {
        return points.to_vec();
    }
    let mut cells: rustc_hash::FxHashMap<(i64, i64, i64), usize> = Default::default();
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    let mut members = Vec::with_capacity(points.len());
    for p in points {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let idx = *cells.entry(key).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[idx].0 += p;
        sums[idx].1 += 1;
        members.push(idx);
    }
    let centroids: Vec<Vector3<f64>> = sums.iter().map(|(s, n)| s / *n as f64).collect();
    let mut best: Vec<Option<(f64, Point3)>> = vec![None; centroids.len()];
    for (p, &idx) in points.iter().zip(&members) {
        let d = (p - centroids[idx]).norm_squared();
        if best[idx].is_none_or(|(bd, _)| d < bd) {
            best[idx] = Some((d, *p));
        }
    }
    best.into_iter().map(|b| b.expect("occupied cell").1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel_map::MapConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let mut v = || {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            };
            let pose = Pose::from_parts(v() * 2.0, v() * 5.0);
            let normal = v().normalize();
            let point = v() * 8.0;
            let d = 0.7;
            let m = PointMatch {
                point,
                normal,
                d,
                residual: 0.0,
            };
            let analytic = m.jacobian(&pose.rotation_matrix());
            let eps = 1e-6;
            for j in 0..6 {
                let mut e = Vector6::zeros();
                e[j] = eps;
                let f = |s: f64| {
                    let dp = Vector3::new(e[0], e[1], e[2]) * s;
                    let dth = Vector3::new(e[3], e[4], e[5]) * s;
                    normal.dot(&pose.perturbed(&dp, &dth).apply(&point)) + d
                };
                let numeric = (f(1.0) - f(-1.0)) / (2.0 * eps);
                let scale = analytic[j].abs().max(1.0);
                assert!(
                    (numeric - analytic[j]).abs() / scale < 1e-5,
                    "{j}: {numeric} vs {}",
                    analytic[j]
                );
            }
        }
    }

    #[test]
    fn single_wall_has_null_space() {
        let mut map = VoxelMap::new(MapConfig::default());
        let mut wall = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                wall.push(Vector3::new(5.0, -3.0 + i as f64 * 0.1, -3.0 + j as f64 * 0.1));
            }
        }
        map.insert(&wall);
        let scan: Vec<_> = wall.iter().step_by(7).copied().collect();
        let pose = Pose::from_translation(Vector3::new(0.01, 0.0, 0.0));
        let matches = match_points(&scan, &pose, &map, &MatchParams::default());
        assert!(matches.len() > 100);
        let ne = NormalEquations::build(&matches, &pose);
        assert!(ne.min_eigenvalue() < 1e-6);
        assert!((ne.rms() - 0.01).abs() < 1e-9);
    }

    #[test]
    fn downsample_keeps_point_nearest_centroid() {
        let pts = vec![
            Vector3::new(0.1, 0.1, 0.1),
            Vector3::new(0.22, 0.1, 0.1),
            Vector3::new(0.3, 0.1, 0.1),
            Vector3::new(1.1, 0.1, 0.1),
        ];
        let out = downsample(&pts, 0.5);
        assert_eq!(out, vec![pts[1], pts[3]]);
        assert_eq!(downsample(&pts, 0.0), pts);
    }
}
