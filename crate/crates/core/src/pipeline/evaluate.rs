//! Accuracy metrics of an estimated trajectory against a reference.
//!
//! The reference is interpolated linearly to the estimate timestamps. Since
//! the estimate is relative, it is first aligned to the reference by position
//! and heading at the first common epoch. Velocity comes from the files when
//! present and from finite differences of position otherwise.

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::csvio::TrajectoryPoint;
use super::PipelineError;
use crate::linalg::{wrap_pi, yaw_of};

/// Shortest overlap accepted for evaluation (s).
pub const MIN_OVERLAP: f64 = 10.0;

/// Longest gap between reference samples (s).
pub const MAX_REFERENCE_GAP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rms_h_m: f64,
    pub cdf68_m: f64,
    pub rms_v_mps: f64,
    pub rms_heading_deg: f64,
    pub max_h_m: f64,
    /// Horizontal path length of the reference over the overlap.
    pub length_m: f64,
    pub duration_s: f64,
    pub samples: usize,
}

/// Aligned errors at one estimate epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub t: f64,
    pub est: Vector3<f64>,
    pub reference: Vector3<f64>,
    pub horizontal_m: f64,
    pub velocity_mps: f64,
    pub heading_deg: f64,
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    r: Vector3<f64>,
    v: Vector3<f64>,
    yaw: f64,
}

fn velocities(points: &[TrajectoryPoint]) -> Vec<Vector3<f64>> {
    let n = points.len();
    (0..n)
        .map(|k| {
            if let Some(v) = points[k].v_n {
                return v;
            }
            if n < 2 {
                return Vector3::zeros();
            }
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (points[b].r_n - points[a].r_n) / (points[b].t - points[a].t)
        })
        .collect()
}

fn interpolate(points: &[TrajectoryPoint], vel: &[Vector3<f64>], t: f64) -> Option<Pose> {
    let first = points.first()?;
    let last = points.last()?;
    if t < first.t || t > last.t {
        return None;
    }
    let k = points.partition_point(|p| p.t <= t);
    if k == points.len() {
        return Some(Pose {
            r: last.r_n,
            v: vel[k - 1],
            yaw: yaw_of(&last.c_bn),
        });
    }
    let (a, b) = (&points[k - 1], &points[k]);
    let w = (t - a.t) / (b.t - a.t);
    let ya = yaw_of(&a.c_bn);
    let yb = yaw_of(&b.c_bn);
    Some(Pose {
        r: a.r_n.lerp(&b.r_n, w),
        v: vel[k - 1].lerp(&vel[k], w),
        yaw: ya + w * wrap_pi(yb - ya),
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Linear-interpolated 68th percentile, rank `0.68·(n − 1)` of the sorted values.
pub fn cdf68(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile(&v, 0.68)
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Aligned error series over the common time span.
pub fn error_series(
    estimate: &[TrajectoryPoint],
    reference: &[TrajectoryPoint],
) -> Result<Vec<ErrorSample>, PipelineError> {
    if let Some(w) = reference
        .windows(2)
        .find(|w| w[1].t - w[0].t > MAX_REFERENCE_GAP + 1e-9)
    {
        return Err(PipelineError::Data(format!(
            "reference has a {:.3} s gap at t = {:.3}; at least 1 Hz is required",
            w[1].t - w[0].t,
            w[0].t
        )));
    }
    let ref_vel = velocities(reference);
    let est_vel = velocities(estimate);
    let common: Vec<(usize, Pose)> = estimate
        .iter()
        .enumerate()
        .filter_map(|(k, p)| interpolate(reference, &ref_vel, p.t).map(|r| (k, r)))
        .collect();
    let span = match (common.first(), common.last()) {
        (Some(a), Some(b)) => estimate[b.0].t - estimate[a.0].t,
        _ => 0.0,
    };
    if span < MIN_OVERLAP {
        return Err(PipelineError::Data(format!(
            "estimate and reference overlap for {span:.2} s, need at least {MIN_OVERLAP} s"
        )));
    }

    let (k0, ref0) = common[0];
    let est0 = &estimate[k0];
    let dyaw = wrap_pi(ref0.yaw - yaw_of(&est0.c_bn));
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), dyaw);

    Ok(common
        .iter()
        .map(|&(k, r)| {
            let e = &estimate[k];
            let p = rot * (e.r_n - est0.r_n) + ref0.r;
            let v = rot * est_vel[k];
            let dpos: Vector2<f64> = (p - r.r).xy();
            let dvel: Vector2<f64> = (v - r.v).xy();
            let dyaw_k = wrap_pi(yaw_of(&e.c_bn) + dyaw - r.yaw);
            ErrorSample {
                t: e.t,
                est: p,
                reference: r.r,
                horizontal_m: dpos.norm(),
                velocity_mps: dvel.norm(),
                heading_deg: dyaw_k.to_degrees(),
            }
        })
        .collect())
}

/// Metrics of `estimate` against `reference`.
pub fn evaluate(estimate: &[TrajectoryPoint], reference: &[TrajectoryPoint]) -> Result<MetricsReport, PipelineError> {
    let series = error_series(estimate, reference)?;
    let h: Vec<f64> = series.iter().map(|s| s.horizontal_m).collect();
    let length = series
        .windows(2)
        .map(|w| (w[1].reference - w[0].reference).xy().norm())
        .sum();
    Ok(MetricsReport {
        rms_h_m: rms(h.iter().copied()),
        cdf68_m: cdf68(&h),
        rms_v_mps: rms(series.iter().map(|s| s.velocity_mps)),
        rms_heading_deg: rms(series.iter().map(|s| s.heading_deg)),
        max_h_m: h.iter().copied().fold(0.0, f64::max),
        length_m: length,
        duration_s: series[series.len() - 1].t - series[0].t,
        samples: series.len(),
    })
}
