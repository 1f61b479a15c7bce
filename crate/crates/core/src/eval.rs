//! Trajectory accuracy metrics: absolute trajectory error after optional
//! rigid alignment, and relative pose error over fixed time deltas.

use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation, Timestamp};
use crate::tum::StampedPose;

/// Maximum time difference for associating an estimate with a truth pose.
pub const ASSOCIATION_WINDOW: f64 = 0.01;
/// Time delta for relative pose errors.
pub const RPE_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    None,
    Umeyama,
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "umeyama" | "se3-umeyama" => Ok(Self::Umeyama),
            other => Err(Error::Config(format!(
                "unknown alignment {other:?} (expected none|umeyama)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    /// Associated pose pairs.
    pub count: usize,
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// RMS error per world axis.
    pub rmse_xyz: [f64; 3],
    /// RMS translational / rotational error over 1 s deltas.
    pub rpe_trans: f64,
    pub rpe_rot_deg: f64,
    pub rpe_count: usize,
    /// Rigid transform applied to the estimate.
    pub alignment: Pose,
}

/// Pairs each estimate with the nearest truth pose within the window.
pub fn associate(est: &[StampedPose], truth: &[StampedPose], window: f64) -> Vec<(StampedPose, StampedPose)> {
    let mut sorted: Vec<&StampedPose> = truth.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    est.iter()
        .filter_map(|e| {
            let i = sorted.partition_point(|g| g.t < e.t);
            let candidates = [i.checked_sub(1), Some(i)];
            candidates
                .into_iter()
                .flatten()
                .filter_map(|k| sorted.get(k))
                .map(|g| ((g.t - e.t).abs(), *g))
                .filter(|(dt, _)| *dt <= window)
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, g)| (*e, *g))
        })
        .collect()
}

/// Least-squares rigid transform `T` (no scale) minimizing
/// `Σ |T·src_i − dst_i|²`.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
    let n = src.len().min(dst.len());
    if n == 0 {
        return Pose::identity();
    }
    let mu_s = src[..n].iter().sum::<Vector3<f64>>() / n as f64;
    let mu_d = dst[..n].iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for (s, d) in src[..n].iter().zip(&dst[..n]) {
        cov += (d - mu_d) * (s - mu_s).transpose();
    }
    cov /= n as f64;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut sign = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * v_t;
    let rotation = Rotation::from_matrix(&r);
    Pose::new(rotation, mu_d - rotation * mu_s)
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// ATE and RPE of `est` against `truth`.
pub fn compute_ate(est: &[StampedPose], truth: &[StampedPose], align: Alignment) -> Result<AteReport> {
    let pairs = associate(est, truth, ASSOCIATION_WINDOW);
    if pairs.len() < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 associated poses, found {}",
            pairs.len()
        )));
    }
    let alignment = match align {
        Alignment::None => Pose::identity(),
        Alignment::Umeyama => {
            let src: Vec<_> = pairs.iter().map(|(e, _)| e.pose.translation).collect();
            let dst: Vec<_> = pairs.iter().map(|(_, g)| g.pose.translation).collect();
            umeyama(&src, &dst)
        }
    };
    let errors: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|(e, g)| alignment.apply(&e.pose.translation) - g.pose.translation)
        .collect();
    let mut norms: Vec<f64> = errors.iter().map(|e| e.norm()).collect();
    let n = norms.len() as f64;
    let rmse = rms(norms.iter().copied());
    let mean = norms.iter().sum::<f64>() / n;
    let max = norms.iter().copied().fold(0.0, f64::max);
    norms.sort_by(f64::total_cmp);
    let mid = norms.len() / 2;
    let median = if norms.len().is_multiple_of(2) {
        0.5 * (norms[mid - 1] + norms[mid])
    } else {
        norms[mid]
    };
    let rmse_xyz = [0, 1, 2].map(|k| rms(errors.iter().map(|e| e[k])));

    let (rpe_t, rpe_r) = relative_errors(&pairs, RPE_DELTA);
    Ok(AteReport {
        count: pairs.len(),
        rmse,
        mean,
        median,
        max,
        rmse_xyz,
        rpe_trans: rms(rpe_t.iter().copied()),
        rpe_rot_deg: rms(rpe_r.iter().copied()).to_degrees(),
        rpe_count: rpe_t.len(),
        alignment,
    })
}

fn relative_errors(pairs: &[(StampedPose, StampedPose)], delta: Timestamp) -> (Vec<f64>, Vec<f64>) {
    let mut trans = Vec::new();
    let mut rot = Vec::new();
    for (i, (ei, gi)) in pairs.iter().enumerate() {
        let target = ei.t + delta;
        let j = pairs.partition_point(|(e, _)| e.t < target - ASSOCIATION_WINDOW);
        let Some((ej, gj)) = pairs.get(j).filter(|(e, _)| (e.t - target).abs() <= ASSOCIATION_WINDOW) else {
            continue;
        };
        if j <= i {
            continue;
        }
        let d_est = ei.pose.between(&ej.pose);
        let d_gt = gi.pose.between(&gj.pose);
        let err = d_gt.between(&d_est);
        trans.push(err.translation.norm());
        rot.push(err.rotation.angle());
    }
    (trans, rot)
}

/// Final-pose translational drift of `est` against `truth`.
pub fn final_drift(est: &[StampedPose], truth: &[StampedPose]) -> Option<f64> {
    let pairs = associate(est, truth, ASSOCIATION_WINDOW);
    pairs
        .last()
        .map(|(e, g)| (e.pose.translation - g.pose.translation).norm())
}
