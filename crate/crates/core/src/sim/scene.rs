//! Static scene geometry: axis-aligned boxes and planar parallelogram patches.

use std::path::Path;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

const HIT_EPS: f64 = 1e-9;

/// Axis-aligned box. Rays starting outside hit the entry face, rays
/// starting inside hit the exit face, so a large box doubles as a room shell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub id: u32,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Finite planar patch spanned by `corner + a*edge_u + b*edge_v`, a, b in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub id: u32,
    pub corner: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default = "meters")]
    pub units: String,
    #[serde(default)]
    pub boxes: Vec<SceneBox>,
    #[serde(default)]
    pub patches: Vec<Patch>,
}

fn meters() -> String {
    "meters".to_string()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub surface_id: u32,
}

impl Scene {
    pub fn new(boxes: Vec<SceneBox>, patches: Vec<Patch>) -> Result<Self> {
        let scene = Scene {
            units: meters(),
            boxes,
            patches,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.units != "meters" {
            return Err(Error::Config(format!(
                "scene units must be meters, got {:?}",
                self.units
            )));
        }
        if self.boxes.is_empty() && self.patches.is_empty() {
            return Err(Error::Config("scene has no surfaces".into()));
        }
        for b in &self.boxes {
            if (0..3).any(|i| !(b.min[i] < b.max[i]) || !b.min[i].is_finite() || !b.max[i].is_finite()) {
                return Err(Error::Config(format!("box {} has empty or non-finite extent", b.id)));
            }
        }
        for p in &self.patches {
            let u = Vector3::from(p.edge_u);
            let v = Vector3::from(p.edge_v);
            if u.cross(&v).norm() <= 1e-9 * u.norm().max(1.0) * v.norm().max(1.0) {
                return Err(Error::Config(format!("patch {} has dependent edge vectors", p.id)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    /// Nearest intersection along a unit direction within `(0, max_range]`.
    pub fn raycast(&self, origin: &Point3, dir: &Vector3<f64>, max_range: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut limit = max_range;
        for b in &self.boxes {
            if let Some(t) = ray_box(origin, dir, b) {
                if t <= limit {
                    limit = t;
                    best = Some(Hit {
                        range: t,
                        surface_id: b.id,
                    });
                }
            }
        }
        for p in &self.patches {
            if let Some(t) = ray_patch(origin, dir, p) {
                if t <= limit {
                    limit = t;
                    best = Some(Hit {
                        range: t,
                        surface_id: p.id,
                    });
                }
            }
        }
        best
    }

    /// Distance from `p` to the surface with the given id, if it exists.
    pub fn surface_distance(&self, surface_id: u32, p: &Point3) -> Option<f64> {
        let box_d = self
            .boxes
            .iter()
            .filter(|b| b.id == surface_id)
            .map(|b| box_surface_distance(b, p));
        let patch_d = self
            .patches
            .iter()
            .filter(|q| q.id == surface_id)
            .map(|q| patch_distance(q, p));
        box_d.chain(patch_d).reduce(f64::min)
    }
}

fn ray_box(o: &Point3, d: &Vector3<f64>, b: &SceneBox) -> Option<f64> {
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i] < b.min[i] || o[i] > b.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let (mut t0, mut t1) = ((b.min[i] - o[i]) * inv, (b.max[i] - o[i]) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        tmin = tmin.max(t0);
        tmax = tmax.min(t1);
        if tmin > tmax {
            return None;
        }
    }
    if tmax <= HIT_EPS {
        None
    } else if tmin > HIT_EPS {
        Some(tmin)
    } else {
        Some(tmax)
    }
}

fn patch_frame(p: &Patch) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    (
        Vector3::from(p.corner),
        Vector3::from(p.edge_u),
        Vector3::from(p.edge_v),
    )
}

/// Barycentric-style coefficients of `q - corner` in the patch edge basis.
fn patch_coords(p: &Patch, q: &Point3) -> Vector2<f64> {
    let (c, u, v) = patch_frame(p);
    let r = q - c;
    let g = Matrix2::new(u.dot(&u), u.dot(&v), u.dot(&v), v.dot(&v));
    let rhs = Vector2::new(r.dot(&u), r.dot(&v));
    g.lu().solve(&rhs).unwrap_or(Vector2::new(f64::NAN, f64::NAN))
}

fn ray_patch(o: &Point3, d: &Vector3<f64>, p: &Patch) -> Option<f64> {
    let (c, u, v) = patch_frame(p);
    let n = u.cross(&v);
    let denom = n.dot(d);
    if denom.abs() < 1e-12 * n.norm() {
        return None;
    }
    let t = n.dot(&(c - o)) / denom;
    if t <= HIT_EPS {
        return None;
    }
    let ab = patch_coords(p, &(o + d * t));
    let inside = |x: f64| (-1e-12..=1.0 + 1e-12).contains(&x);
    (inside(ab.x) && inside(ab.y)).then_some(t)
}

fn box_surface_distance(b: &SceneBox, p: &Point3) -> f64 {
    let inside = (0..3).all(|i| p[i] >= b.min[i] && p[i] <= b.max[i]);
    if inside {
        (0..3)
            .map(|i| (p[i] - b.min[i]).min(b.max[i] - p[i]))
            .fold(f64::INFINITY, f64::min)
    } else {
        let mut d2 = 0.0;
        for i in 0..3 {
            let e = (b.min[i] - p[i]).max(0.0).max(p[i] - b.max[i]);
            d2 += e * e;
        }
        d2.sqrt()
    }
}

fn patch_distance(p: &Patch, q: &Point3) -> f64 {
    let (c, u, v) = patch_frame(p);
    let ab = patch_coords(p, q);
    let a = ab.x.clamp(0.0, 1.0);
    let b = ab.y.clamp(0.0, 1.0);
    // exact for points projecting inside; clamped approximation outside
    (q - (c + u * a + v * b)).norm()
}

/// Helpers for building scenes programmatically.
pub mod build {
    use super::*;

    pub fn aabb(id: u32, min: [f64; 3], max: [f64; 3]) -> SceneBox {
        SceneBox { id, min, max }
    }

    pub fn patch(id: u32, corner: [f64; 3], edge_u: [f64; 3], edge_v: [f64; 3]) -> Patch {
        Patch {
            id,
            corner,
            edge_u,
            edge_v,
        }
    }
}
