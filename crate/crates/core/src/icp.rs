//! Point-to-plane ICP against the voxel map.

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::correspondence::{match_points, MatchParams, NormalEquations};
use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose};
use crate::voxel_map::VoxelMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Matching used once the estimate has settled.
    pub matching: MatchParams,
    /// Gate and search radius of the first iteration; both shrink
    /// geometrically towards `matching` so distant initial guesses still
    /// find their planes.
    pub initial_gate: f64,
    pub gate_decay: f64,
    pub step_tolerance: f64,
    pub rms_tolerance: f64,
    /// Fewer correspondences than this aborts as not converged.
    pub min_matches: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            matching: MatchParams::default(),
            initial_gate: 1.5,
            gate_decay: 0.7,
            step_tolerance: 1e-5,
            rms_tolerance: 1e-8,
            min_matches: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest eigenvalue of `HᵀH` at the final pose.
    pub min_eig: f64,
    pub matched: usize,
}

/// Consecutive RMS increases that end a run.
const MAX_REJECTIONS: usize = 3;

/// Minimum target size accepted by `register`.
pub const MIN_TARGET_POINTS: usize = 100;

fn solve(hth: &Matrix6<f64>, htr: &Vector6<f64>) -> Option<Vector6<f64>> {
    // tiny Levenberg term keeps rank-deficient systems (single wall) solvable
    let damped = hth + Matrix6::identity() * (1e-9 * hth.trace().max(1e-12));
    damped.cholesky().map(|c| -c.solve(htr))
}

/// Registers sensor-frame `source` points into `target` starting from
/// `initial`. Gauss-Newton on stacked point-to-plane residuals with an
/// annealed outlier gate. While the gate is wide, a step that raises the
/// RMS is retried at half length and three rejections in a row move
/// straight to the fine gate. At the fine gate every step is taken; the run
/// fails there only when too few correspondences remain.
pub fn register(source: &[Point3], target: &VoxelMap, initial: &Pose, params: &IcpParams) -> Result<IcpResult> {
    if source.is_empty() {
        return Err(Error::Precondition("ICP source is empty".into()));
    }
    if target.len() < MIN_TARGET_POINTS {
        return Err(Error::Precondition(format!(
            "ICP target has {} points, need at least {MIN_TARGET_POINTS}",
            target.len()
        )));
    }
    let fine = params.matching;
    let schedule = |stage: usize| {
        let scale = params.gate_decay.powi(stage as i32);
        let gate = (params.initial_gate * scale).max(fine.outlier_gate);
        MatchParams {
            outlier_gate: gate,
            search_radius: fine.search_radius.max(gate),
            ..fine
        }
    };
    let evaluate =
        |pose: &Pose, mp: &MatchParams| NormalEquations::build(&match_points(source, pose, target, mp), pose);

    let mut pose = *initial;
    let mut stage = 0;
    let mut mp = schedule(stage);
    let mut current = evaluate(&pose, &mp);
    let mut iter = 0;
    let mut rejections = 0;
    let mut step_scale = 1.0;
    // true once the loop ends at a minimum or on the iteration cap
    let mut converged = true;
    while iter < params.max_iterations {
        iter += 1;
        if current.count < params.min_matches {
            converged = false;
            break;
        }
        let Some(dx) = solve(&current.hth, &current.htr) else {
            converged = false;
            break;
        };
        let dx = dx * step_scale;
        let candidate = pose.perturbed(&Vector3::new(dx[0], dx[1], dx[2]), &Vector3::new(dx[3], dx[4], dx[5]));
        let after = evaluate(&candidate, &mp);
        let settled = mp == fine;
        // at the fine gate the matched set changes between steps, so RMS is
        // no descent measure there and steps are taken as in plain ICP
        let improved = after.count >= params.min_matches && (settled || after.rms() <= current.rms() * (1.0 + 1e-12));
        if !settled && dx.norm() < params.step_tolerance {
            // already settled under the wide gate; annealing further is moot
            mp = fine;
            current = evaluate(&pose, &mp);
            rejections = 0;
            step_scale = 1.0;
            continue;
        }
        if !improved {
            rejections += 1;
            if rejections < MAX_REJECTIONS {
                step_scale *= 0.5;
                continue;
            }
            if !settled {
                // the wide gate has done its job; continue with fine matching
                mp = fine;
                current = evaluate(&pose, &mp);
                rejections = 0;
                step_scale = 1.0;
                continue;
            }
            // too few correspondences at the fine gate
            converged = false;
            break;
        }
        rejections = 0;
        step_scale = 1.0;
        let rms_change = (current.rms() - after.rms()).abs();
        pose = candidate;
        current = after;
        if settled && (dx.norm() < params.step_tolerance || rms_change < params.rms_tolerance) {
            break;
        }
        if !settled {
            stage += 1;
            mp = schedule(stage);
            current = evaluate(&pose, &mp);
        }
    }
    // report at the final pose under the fine association
    let final_ne = if mp == fine { current } else { evaluate(&pose, &fine) };
    let converged = converged && final_ne.count >= params.min_matches && final_ne.rms().is_finite();
    Ok(IcpResult {
        pose,
        rms: final_ne.rms(),
        iterations: iter,
        converged,
        min_eig: final_ne.min_eigenvalue(),
        matched: final_ne.count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::from_rpy;
    use crate::voxel_map::MapConfig;

    /// Dense samples of the inside of a 8×6×3 m room with a pillar.
    pub(crate) fn room_cloud(step: f64) -> Vec<Point3> {
        let mut pts = Vec::new();
        let (x0, x1, y0, y1, z0, z1) = (-4.0, 4.0, -3.0, 3.0, 0.0, 3.0);
        let range = |a: f64, b: f64| {
            let n = ((b - a) / step).round() as usize;
            (0..=n).map(move |i| a + (b - a) * i as f64 / n as f64)
        };
        for x in range(x0, x1) {
            for y in range(y0, y1) {
                pts.push(Vector3::new(x, y, z0));
                pts.push(Vector3::new(x, y, z1));
            }
            for z in range(z0, z1) {
                pts.push(Vector3::new(x, y0, z));
                pts.push(Vector3::new(x, y1, z));
            }
        }
        for y in range(y0, y1) {
            for z in range(z0, z1) {
                pts.push(Vector3::new(x0, y, z));
                pts.push(Vector3::new(x1, y, z));
            }
        }
        for z in range(z0, z1) {
            for t in range(0.0, 1.0) {
                pts.push(Vector3::new(1.0 + t, 1.0, z));
                pts.push(Vector3::new(1.0, 1.0 + t, z));
            }
        }
        pts
    }

    /// Matching thresholds suited to noise-free clouds.
    pub(crate) fn exact_params() -> IcpParams {
        IcpParams {
            matching: MatchParams {
                plane_threshold: 1e-3,
                plane_max_residual: 2e-3,
                ..MatchParams::default()
            },
            ..IcpParams::default()
        }
    }

    fn room_map() -> VoxelMap {
        let mut map = VoxelMap::new(MapConfig::default());
        map.insert(&room_cloud(0.1));
        map
    }

    #[test]
    fn self_registration_is_identity() {
        let map = room_map();
        let source: Vec<_> = room_cloud(0.1).into_iter().step_by(5).collect();
        let r = register(&source, &map, &Pose::identity(), &exact_params()).unwrap();
        assert!(r.converged);
        let (dt, dr) = r.pose.distance(&Pose::identity());
        assert!(dt < 1e-9 && dr < 1e-9, "{dt} {dr}");
        assert!(r.rms < 1e-9);
    }

    #[test]
    fn recovers_known_transform() {
        let map = room_map();
        let truth = Pose::new(from_rpy(0.0, 0.0, 5f64.to_radians()), Vector3::new(0.2, -0.1, 0.05));
        // sensor at `truth` sees room points expressed in its own frame
        let source: Vec<_> = room_cloud(0.1)
            .into_iter()
            .step_by(4)
            .map(|p| truth.inverse().apply(&p))
            .collect();
        let r = register(&source, &map, &Pose::identity(), &exact_params()).unwrap();
        assert!(r.converged);
        let (dt, dr) = r.pose.distance(&truth);
        assert!(dt < 1e-3 && dr.to_degrees() < 0.05, "{dt} {}", dr.to_degrees());
    }

    #[test]
    fn single_wall_is_degenerate() {
        let map = room_map();
        let source: Vec<_> = room_cloud(0.1)
            .into_iter()
            .filter(|p| p.x == 4.0 && p.y.abs() < 2.5 && (0.5..2.5).contains(&p.z))
            .collect();
        let r = register(&source, &map, &Pose::identity(), &IcpParams::default()).unwrap();
        assert!(r.min_eig < 1e-6, "{}", r.min_eig);
    }

    #[test]
    fn argument_errors() {
        let map = room_map();
        assert!(register(&[], &map, &Pose::identity(), &IcpParams::default()).is_err());
        let mut small = VoxelMap::new(MapConfig::default());
        small.insert(&[Vector3::new(1.0, 0.0, 0.0)]);
        assert!(register(&[Vector3::zeros()], &small, &Pose::identity(), &IcpParams::default()).is_err());
    }
}
