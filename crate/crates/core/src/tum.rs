//! TUM trajectory files: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{canonical, Pose, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub t: Timestamp,
    pub pose: Pose,
}

impl StampedPose {
    pub fn new(t: Timestamp, pose: Pose) -> Self {
        Self { t, pose }
    }
}

/// Formats `x` like C's `%.{digits}g`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn format_line(sp: &StampedPose) -> String {
    let q = canonical(&sp.pose.rotation);
    let t = &sp.pose.translation;
    let mut line = String::new();
    for (i, v) in [sp.t, t.x, t.y, t.z, q.i, q.j, q.k, q.w].iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        // normalize -0 so files diff cleanly
        let v = if *v == 0.0 { 0.0 } else { *v };
        line.push_str(&format_significant(v, 9));
    }
    line
}

pub fn to_string(traj: &[StampedPose]) -> String {
    let mut out = String::with_capacity(traj.len() * 96);
    for sp in traj {
        let _ = writeln!(out, "{}", format_line(sp));
    }
    out
}

pub fn parse(text: &str, origin: &Path) -> Result<Vec<StampedPose>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(origin, format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 8 {
            return Err(Error::parse(
                origin,
                format!("line {}: expected 8 fields, got {}", lineno + 1, vals.len()),
            ));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if q.norm() < 1e-6 {
            return Err(Error::parse(origin, format!("line {}: zero quaternion", lineno + 1)));
        }
        out.push(StampedPose::new(
            vals[0],
            Pose::new(
                UnitQuaternion::new_normalize(q),
                Vector3::new(vals[1], vals[2], vals[3]),
            ),
        ));
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<StampedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

pub fn write(path: &Path, traj: &[StampedPose]) -> Result<()> {
    crate::dataset::write_atomic(path, to_string(traj).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_z;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(12.345678901, 9), "12.3456789");
        assert_eq!(format_significant(0.5, 9), "0.5");
        assert_eq!(format_significant(-1.0, 9), "-1");
        assert_eq!(format_significant(1.23456789e-7, 9), "1.23456789e-07");
        assert_eq!(format_significant(123456789012.0, 9), "1.23456789e+11");
        assert_eq!(format_significant(0.000123, 9), "0.000123");
    }

    #[test]
    fn negative_w_is_canonicalized() {
        let q = UnitQuaternion::new_unchecked(-rot_z(0.5).into_inner());
        let line = format_line(&StampedPose::new(1.0, Pose::from_rotation(q)));
        let qw: f64 = line.split(' ').next_back().unwrap().parse().unwrap();
        assert!(qw > 0.0);
    }

    #[test]
    fn parse_roundtrip_within_printed_precision() {
        let traj = vec![
            StampedPose::new(0.1, Pose::new(rot_z(0.3), Vector3::new(1.5, -2.25, 0.125))),
            StampedPose::new(0.2, Pose::new(rot_z(-1.0), Vector3::new(3.0, 0.0, 1e-3))),
        ];
        let text = to_string(&traj);
        let back = parse(&format!("# header\n{text}"), Path::new("mem")).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in traj.iter().zip(&back) {
            let (dt, dr) = a.pose.distance(&b.pose);
            assert!(dt < 1e-8 && dr < 1e-8);
        }
        assert!(parse("1 2 3", Path::new("mem")).is_err());
    }
}
