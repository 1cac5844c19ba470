//! Trajectory and speed error metrics.
//!
//! Trajectories are compared pose by pose on identical timestamps and share
//! the start pose, so no alignment is applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_angle, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajReport {
    /// m
    pub ate: f64,
    /// m
    pub rte: f64,
    pub pde: f64,
    /// degrees
    pub aye: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub cep68: f64,
    pub cep80: f64,
    pub cep95: f64,
    #[serde(rename = "max")]
    pub max_err: f64,
    pub tcr: f64,
}

/// Default RTE window, s.
pub const RTE_SPAN: f64 = 60.0;

const STAMP_TOL: f64 = 1e-6;

fn check_aligned(est: &Trajectory, gt: &Trajectory) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::Data(format!(
            "trajectory lengths differ: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    if let Some((a, b)) = est
        .stamps()
        .iter()
        .zip(gt.stamps())
        .find(|(a, b)| (*a - *b).abs() > STAMP_TOL)
    {
        return Err(Error::Data(format!("timestamps differ: {a} vs {b}")));
    }
    Ok(())
}

/// Root-mean-square planar position error.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_aligned(est, gt)?;
    let sum: f64 = est
        .poses()
        .iter()
        .zip(gt.poses())
        .map(|(e, g)| (e.x - g.x).powi(2) + (e.y - g.y).powi(2))
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// Relative trajectory error over windows of `span` seconds starting at every
/// pose. Each window re-anchors the estimate on the ground-truth pose
/// (position and heading) at its start and measures the end-point error; the
/// result is the RMS over windows.
pub fn rte(est: &Trajectory, gt: &Trajectory, span: f64) -> Result<f64> {
    check_aligned(est, gt)?;
    if !(span > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "span must be positive, got {span}"
        )));
    }
    if gt.duration() + STAMP_TOL < span {
        return Err(Error::Data(format!(
            "trajectory of {} s is shorter than the {span} s window",
            gt.duration()
        )));
    }
    let t = gt.stamps();
    let (e, g) = (est.poses(), gt.poses());
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut j = 0;
    for i in 0..t.len() {
        let target = t[i] + span - STAMP_TOL;
        while j < t.len() && t[j] < target {
            j += 1;
        }
        if j == t.len() {
            break;
        }
        let delta = g[i].psi - e[i].psi;
        let (s, c) = delta.sin_cos();
        let (dx, dy) = (e[j].x - e[i].x, e[j].y - e[i].y);
        let x = g[i].x + dx * c + dy * s;
        let y = g[i].y + dy * c - dx * s;
        sum += (x - g[j].x).powi(2) + (y - g[j].y).powi(2);
        count += 1;
    }
    Ok((sum / count as f64).sqrt())
}

/// End-point error divided by the ground-truth path length.
pub fn pde(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_aligned(est, gt)?;
    let len = gt.path_length();
    if !(len > 0.0) {
        return Err(Error::Data("ground truth has zero path length".into()));
    }
    Ok(est.last().distance_to(gt.last()) / len)
}

/// Mean absolute wrapped heading error, degrees.
pub fn aye(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_aligned(est, gt)?;
    let sum: f64 = est
        .poses()
        .iter()
        .zip(gt.poses())
        .map(|(e, g)| wrap_angle(e.psi - g.psi).abs())
        .sum();
    Ok((sum / est.len() as f64).to_degrees())
}

/// All four trajectory metrics. RTE uses the whole trajectory as a single
/// window when it is shorter than `span`.
pub fn traj_report(est: &Trajectory, gt: &Trajectory, span: f64) -> Result<TrajReport> {
    let span = span.min(gt.duration());
    Ok(TrajReport {
        ate: ate(est, gt)?,
        rte: if span > 0.0 { rte(est, gt, span)? } else { 0.0 },
        pde: pde(est, gt)?,
        aye: aye(est, gt)?,
    })
}

/// Nearest-rank percentile of absolute errors: the element of rank
/// `ceil(q n)` (1-indexed) in ascending order.
pub fn cep(errors: &[f64], q: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Data("no errors to rank".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must be in (0, 1], got {q}"
        )));
    }
    crate::error::ensure_finite("speed errors", errors)?;
    let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    // the epsilon keeps e.g. 0.8 * 10 at rank 8 despite rounding
    let rank = ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Ok(abs[rank - 1])
}

pub fn speed_report(errors: &[f64], tcr: f64) -> Result<SpeedReport> {
    Ok(SpeedReport {
        cep68: cep(errors, 0.68)?,
        cep80: cep(errors, 0.80)?,
        cep95: cep(errors, 0.95)?,
        max_err: cep(errors, 1.0)?,
        tcr,
    })
}

/// Fraction of `truths` inside `ŷ ± z σ`.
pub fn ci_coverage(estimates: &[(f64, f64)], truths: &[f64], z: f64) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::Data(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::Data("no estimates".into()));
    }
    if let Some(&(_, s)) = estimates.iter().find(|(_, s)| !(*s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {s}"
        )));
    }
    let inside = estimates
        .iter()
        .zip(truths)
        .filter(|((y_hat, s), y)| (*y - y_hat).abs() <= z * s)
        .count();
    Ok(inside as f64 / truths.len() as f64)
}

/// Mean of per-second truth speeds (second `k` covers `[k, k+1)`) over the
/// seconds fully inside `[t_mid - window/2, t_mid + window/2]`.
pub fn reference_speed(per_second: &[f64], t_mid: f64, window: f64) -> Option<f64> {
    let lo = (t_mid - window / 2.0 - 1e-9).ceil().max(0.0) as usize;
    let hi = ((t_mid + window / 2.0 + 1e-9).floor() as usize).min(per_second.len());
    (hi > lo).then(|| per_second[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
}
