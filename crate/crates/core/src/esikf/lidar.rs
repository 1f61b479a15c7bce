//! Point-to-plane LiDAR update.

use serde::{Deserialize, Serialize};

use super::{iterated_update, ErrorVector, FilterState, Information, IterationParams, StateMatrix};
use crate::correspondence::{match_points, MatchParams, NormalEquations};
use crate::geometry::{Point3, Timestamp};
use crate::voxel_map::VoxelMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarParams {
    pub iteration: IterationParams,
    pub matching: MatchParams,
    /// Standard deviation of a point-to-plane residual (m).
    pub point_sigma: f64,
    /// Minimum eigenvalue of `HᵀH` below which the scan is degenerate.
    pub degeneracy_threshold: f64,
    /// Fewer matched points than this skips the update.
    pub min_matches: usize,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            iteration: IterationParams::default(),
            matching: MatchParams::default(),
            point_sigma: 0.02,
            degeneracy_threshold: 10.0,
            min_matches: 10,
        }
    }
}

/// Per-scan diagnostics, one JSON line per scan in the session logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub t: Timestamp,
    pub matched: usize,
    /// RMS point-to-plane residual at the last linearization (m).
    pub rms: f64,
    pub min_eig: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

/// Iterated point-to-plane update of `state` from a deskewed scan (points in
/// the sensor frame at `state.t`). Too few matches or a small minimum
/// eigenvalue of `HᵀH` at the prior flags the scan as degenerate and
/// returns the state untouched.
pub fn update_lidar(
    state: &FilterState,
    points: &[Point3],
    map: &VoxelMap,
    params: &LidarParams,
) -> (FilterState, UpdateReport) {
    let inv_var = 1.0 / (params.point_sigma * params.point_sigma);
    let mut report = UpdateReport {
        t: state.t,
        matched: 0,
        rms: f64::NAN,
        min_eig: 0.0,
        iterations: 0,
        degenerate: true,
    };
    let mut first = true;
    let outcome = iterated_update(state, &params.iteration, |x| {
        let pose = x.pose();
        let matches = match_points(points, &pose, map, &params.matching);
        let ne = NormalEquations::build(&matches, &pose);
        if first {
            first = false;
            report.matched = matches.len();
            report.rms = ne.rms();
            report.min_eig = ne.min_eigenvalue();
            if matches.len() < params.min_matches || report.min_eig < params.degeneracy_threshold {
                return None;
            }
        } else {
            if matches.len() < params.min_matches {
                return None;
            }
            report.matched = matches.len();
            report.rms = ne.rms();
        }
        let mut a = StateMatrix::zeros();
        let mut b = ErrorVector::zeros();
        a.fixed_view_mut::<6, 6>(0, 0).copy_from(&(ne.hth * inv_var));
        b.fixed_rows_mut::<6>(0).copy_from(&(ne.htr * inv_var));
        Some(Information { a, b })
    });
    match outcome {
        Some(out) => {
            report.iterations = out.iterations;
            report.degenerate = false;
            (out.state, report)
        }
        None => (state.clone(), report),
    }
}
