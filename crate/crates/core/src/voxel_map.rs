//! Incremental voxel-hashed point map with exact k-nearest-neighbor queries
//! and local plane fitting.
//!
//! Readers take `&VoxelMap`, the single writer takes `&mut VoxelMap`; the
//! borrow checker enforces the many-readers-or-one-writer contract.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelKey {
    pub fn new(ix: i32, iy: i32, iz: i32) -> Self {
        Self { ix, iy, iz }
    }

    pub fn containing(p: &Point3, voxel_size: f64) -> Self {
        let f = |v: f64| (v / voxel_size).floor() as i32;
        Self::new(f(p.x), f(p.y), f(p.z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub voxel_size: f64,
    /// Maximum points per voxel; later points are rejected once full.
    pub capacity: usize,
    /// A point closer than this to a stored point of its voxel is dropped.
    pub min_distance: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.5,
            capacity: 64,
            min_distance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Voxel {
    points: Vec<Point3>,
    sources: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub point: Point3,
    pub dist2: f64,
}

/// Total order used by every kNN path: distance, then coordinates.
fn neighbor_cmp(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.dist2
        .total_cmp(&b.dist2)
        .then(a.point.x.total_cmp(&b.point.x))
        .then(a.point.y.total_cmp(&b.point.y))
        .then(a.point.z.total_cmp(&b.point.z))
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    config: MapConfig,
    voxels: FxHashMap<VoxelKey, Voxel>,
    /// voxel keys in creation order, for deterministic export
    order: Vec<VoxelKey>,
    count: usize,
    bounds: Option<(VoxelKey, VoxelKey)>,
}

impl VoxelMap {
    pub fn new(config: MapConfig) -> Self {
        Self {
            config,
            voxels: FxHashMap::default(),
            order: Vec::new(),
            count: 0,
            bounds: None,
        }
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    pub fn key_of(&self, p: &Point3) -> VoxelKey {
        VoxelKey::containing(p, self.config.voxel_size)
    }

    pub fn voxel_points(&self, key: &VoxelKey) -> &[Point3] {
        self.voxels.get(key).map(|v| v.points.as_slice()).unwrap_or(&[])
    }

    /// Inserts world-frame points; returns how many were stored.
    pub fn insert(&mut self, points: &[Point3]) -> usize {
        self.insert_tagged(points, 0)
    }

    /// Inserts points tagged with the id of the sensor that observed them.
    pub fn insert_tagged(&mut self, points: &[Point3], source_id: u8) -> usize {
        let min_d2 = self.config.min_distance * self.config.min_distance;
        let mut stored = 0;
        for p in points {
            debug_assert!(p.iter().all(|c| c.is_finite()), "non-finite map point");
            let key = self.key_of(p);
            let voxel = self.voxels.entry(key).or_insert_with(|| {
                self.order.push(key);
                self.bounds = Some(match self.bounds {
                    None => (key, key),
                    Some((lo, hi)) => (
                        VoxelKey::new(lo.ix.min(key.ix), lo.iy.min(key.iy), lo.iz.min(key.iz)),
                        VoxelKey::new(hi.ix.max(key.ix), hi.iy.max(key.iy), hi.iz.max(key.iz)),
                    ),
                });
                Voxel::default()
            });
            if voxel.points.len() >= self.config.capacity {
                continue;
            }
            if voxel.points.iter().any(|q| (q - p).norm_squared() < min_d2) {
                continue;
            }
            voxel.points.push(*p);
            voxel.sources.push(source_id);
            stored += 1;
        }
        self.count += stored;
        stored
    }

    /// Squared distance from `q` to the axis-aligned cell of `key`.
    fn cell_dist2(&self, q: &Point3, key: &VoxelKey) -> f64 {
        let s = self.config.voxel_size;
        let lo = Vector3::new(key.ix as f64, key.iy as f64, key.iz as f64) * s;
        let mut d2 = 0.0;
        for i in 0..3 {
            let e = (lo[i] - q[i]).max(0.0).max(q[i] - (lo[i] + s));
            d2 += e * e;
        }
        d2
    }

    /// Up to `k` stored points within `max_radius` of `query`, nearest first.
    /// Exact: equal to a linear scan under the same ordering. The search
    /// starts from the 3×3×3 neighborhood and grows shell by shell until no
    /// unvisited voxel can hold a closer point.
    pub fn knn(&self, query: &Point3, k: usize, max_radius: f64) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        let Some((lo, hi)) = self.bounds else {
            return best;
        };
        if k == 0 {
            return best;
        }
        let s = self.config.voxel_size;
        let c = self.key_of(query);
        let r2 = max_radius * max_radius;
        let bound = |best: &Vec<Neighbor>| {
            if best.len() == k {
                best[k - 1].dist2.min(r2)
            } else {
                r2
            }
        };
        let max_l = [
            (c.ix - lo.ix).abs(),
            (hi.ix - c.ix).abs(),
            (c.iy - lo.iy).abs(),
            (hi.iy - c.iy).abs(),
            (c.iz - lo.iz).abs(),
            (hi.iz - c.iz).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);

        let visit = |key: VoxelKey, best: &mut Vec<Neighbor>| {
            let Some(voxel) = self.voxels.get(&key) else {
                return;
            };
            if self.cell_dist2(query, &key) > bound(best) {
                return;
            }
            for p in &voxel.points {
                let d2 = (p - query).norm_squared();
                if d2 > bound(best) {
                    continue;
                }
                let n = Neighbor { point: *p, dist2: d2 };
                let pos = best.partition_point(|b| neighbor_cmp(b, &n) == Ordering::Less);
                if pos < k {
                    best.insert(pos, n);
                    best.truncate(k);
                }
            }
        };

        // shell 0 plus shell 1 form the initial 3×3×3 neighborhood
        for l in 0..=max_l.max(1) {
            for dx in -l..=l {
                for dy in -l..=l {
                    let on_face = dx.abs() == l || dy.abs() == l;
                    let mut dz = -l;
                    while dz <= l {
                        let key = VoxelKey::new(c.ix + dx, c.iy + dy, c.iz + dz);
                        let inside = (lo.ix..=hi.ix).contains(&key.ix)
                            && (lo.iy..=hi.iy).contains(&key.iy)
                            && (lo.iz..=hi.iz).contains(&key.iz);
                        if inside {
                            visit(key, &mut best);
                        }
                        dz += if on_face || l == 0 { 1 } else { 2 * l };
                    }
                }
            }
            // nearest point outside the visited cube
            let mut margin = f64::INFINITY;
            for (qi, ci) in [(query.x, c.ix), (query.y, c.iy), (query.z, c.iz)] {
                margin = margin.min(qi - (ci - l) as f64 * s).min((ci + l + 1) as f64 * s - qi);
            }
            if l >= 1 && margin * margin > bound(&best) {
                break;
            }
        }
        best
    }

    /// Linear-scan reference for `knn` under the same ordering.
    pub fn knn_brute_force(&self, query: &Point3, k: usize, max_radius: f64) -> Vec<Neighbor> {
        let r2 = max_radius * max_radius;
        let mut all: Vec<Neighbor> = self
            .iter_points()
            .map(|(p, _)| Neighbor {
                point: *p,
                dist2: (p - query).norm_squared(),
            })
            .filter(|n| n.dist2 <= r2)
            .collect();
        all.sort_by(neighbor_cmp);
        all.truncate(k);
        all
    }

    /// All points with their source tags, in voxel-creation then insertion order.
    pub fn iter_points(&self) -> impl Iterator<Item = (&Point3, u8)> + '_ {
        self.order.iter().flat_map(move |key| {
            let v = &self.voxels[key];
            v.points.iter().zip(v.sources.iter().copied())
        })
    }

    /// Binary little-endian PLY with float32 `x y z` and, optionally, a
    /// uchar `source_id` per vertex.
    pub fn to_ply(&self, with_source: bool) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.count * 13);
        let mut header = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
            self.count
        );
        if with_source {
            header.push_str("property uchar source_id\n");
        }
        header.push_str("end_header\n");
        out.extend_from_slice(header.as_bytes());
        for (p, src) in self.iter_points() {
            for c in [p.x, p.y, p.z] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
            if with_source {
                out.push(src);
            }
        }
        out
    }

    pub fn write_ply(&self, path: &Path, with_source: bool) -> Result<()> {
        crate::dataset::write_atomic(path, &self.to_ply(with_source))
    }
}

/// Minimum neighbors for a plane fit.
pub const MIN_PLANE_POINTS: usize = 5;
pub const DEFAULT_PLANE_THRESHOLD: f64 = 0.1;

/// Plane `n·p + d = 0` fitted through a neighborhood. Residuals use the
/// symmetric form `|n·p + d|`, so the sign of `n` carries no meaning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub normal: Vector3<f64>,
    pub d: f64,
    pub rms: f64,
    /// Largest absolute residual among the fitted points.
    pub max_residual: f64,
    pub count: usize,
    pub valid: bool,
}

impl PlaneFit {
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(p) + self.d
    }

    fn invalid(count: usize) -> Self {
        Self {
            normal: Vector3::z(),
            d: 0.0,
            rms: f64::INFINITY,
            max_residual: f64::INFINITY,
            count,
            valid: false,
        }
    }
}

/// Least-squares plane through the centroid along the smallest eigenvector
/// of the scatter matrix. Fewer than five points, rank-deficient scatter
/// (collinear or coincident points) or RMS above `rms_threshold` give an
/// invalid fit.
pub fn fit_plane(points: &[Point3], rms_threshold: f64) -> PlaneFit {
    let n = points.len();
    if n < MIN_PLANE_POINTS {
        return PlaneFit::invalid(n);
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let e = p - centroid;
        scatter += e * e.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, large) = (eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    if large <= 0.0 || mid <= 1e-10 * large {
        return PlaneFit::invalid(n);
    }
    let normal = eig.eigenvectors.column(idx[0]).normalize();
    let d = -normal.dot(&centroid);
    let mut sum2 = 0.0;
    let mut max_residual: f64 = 0.0;
    for p in points {
        let r = normal.dot(p) + d;
        sum2 += r * r;
        max_residual = max_residual.max(r.abs());
    }
    let rms = (sum2 / n as f64).sqrt();
    PlaneFit {
        normal,
        d,
        rms,
        max_residual,
        count: n,
        valid: rms <= rms_threshold,
    }
}
