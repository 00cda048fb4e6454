//! Post-hoc calibration of the threshold `lambda` by bisection on the monotone
//! empirical risk, plus the cvar-specific `t` selection procedures.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loss::{BoundFn, LinearLoss, Loss, ParamInterval};
use crate::risk::{empirical_h, empirical_h_tilde, Disutility, RiskSpec};
use crate::search::golden_min;

pub const DEFAULT_T_GRID_POINTS: usize = 33;
const JOINT_GOLDEN_ITERS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub lambda_hat: f64,
    pub t_used: f64,
    pub h_tilde_at_lambda: f64,
    /// False when even `lambda_min` violates the target and the fallback was taken.
    pub feasible: bool,
    pub iterations: usize,
}

/// Bisection for `sup {lambda : h(lambda) <= alpha}` on a nondecreasing `h`. Returns the
/// lower bracket, which always satisfies the constraint.
fn bisect<F>(mut h: F, interval: ParamInterval, alpha: f64, t: f64, eps: f64) -> Result<CalibrationResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let (lo, hi) = (interval.lo(), interval.hi());
    let h_lo = h(lo)?;
    if h_lo > alpha {
        return Ok(CalibrationResult { lambda_hat: lo, t_used: t, h_tilde_at_lambda: h_lo, feasible: false, iterations: 0 });
    }
    let h_hi = h(hi)?;
    if h_hi <= alpha {
        return Ok(CalibrationResult { lambda_hat: hi, t_used: t, h_tilde_at_lambda: h_hi, feasible: true, iterations: 0 });
    }
    let (mut a, mut b, mut h_a) = (lo, hi, h_lo);
    let mut iterations = 0;
    while b - a > eps {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let h_mid = h(mid)?;
        iterations += 1;
        if h_mid <= alpha {
            a = mid;
            h_a = h_mid;
        } else {
            b = mid;
        }
    }
    Ok(CalibrationResult { lambda_hat: a, t_used: t, h_tilde_at_lambda: h_a, feasible: true, iterations })
}

fn require_nondecreasing(losses: &[Loss], bound: &BoundFn) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    bound.validate()?;
    match losses.iter().position(|l| !l.is_nondecreasing()) {
        Some(index) => Err(Error::NotMonotone { index }),
        None => Ok(()),
    }
}

/// Expected-loss calibration: largest `lambda` with `h(lambda) <= alpha`.
pub fn crc_bisect(
    losses: &[Loss],
    bound: &BoundFn,
    interval: ParamInterval,
    alpha: f64,
    eps: f64,
) -> Result<CalibrationResult> {
    require_nondecreasing(losses, bound)?;
    bisect(|l| empirical_h(losses, bound, l), interval, alpha, 0.0, eps)
}

/// OCE calibration on the transformed losses `t + phi(L - t)`.
pub fn corc_bisect(losses: &[Loss], bound: &BoundFn, spec: &RiskSpec, eps: f64) -> Result<CalibrationResult> {
    require_nondecreasing(losses, bound)?;
    spec.disutility.validate()?;
    let (t, phi) = (spec.t, spec.disutility);
    bisect(|l| empirical_h_tilde(losses, bound, l, t, &phi), spec.interval, spec.alpha, t, eps)
}

/// Cvar calibration admitting losses monotone in either direction. Outside the window
/// `B(lambda_min) <= t <= alpha` the result is the `lambda_min` fallback.
pub fn conformal_cvar_control(
    losses: &[Loss],
    bound: &BoundFn,
    interval: ParamInterval,
    alpha: f64,
    delta: f64,
    t: f64,
    eps: f64,
) -> Result<CalibrationResult> {
    if losses.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    bound.validate()?;
    let phi = Disutility::cvar(delta)?;
    let lo = interval.lo();
    let b_min = bound.eval(lo);
    if alpha < b_min || t < b_min || t > alpha {
        return Ok(CalibrationResult {
            lambda_hat: lo,
            t_used: t,
            h_tilde_at_lambda: empirical_h_tilde(losses, bound, lo, t, &phi)?,
            feasible: false,
            iterations: 0,
        });
    }
    bisect(|l| empirical_h_tilde(losses, bound, l, t, &phi), interval, alpha, t, eps)
}

/// Evenly spaced candidates on `[B(lambda_min), alpha]`; empty when the window is empty.
pub fn default_t_grid(bound: &BoundFn, interval: ParamInterval, alpha: f64) -> Vec<f64> {
    let b_min = bound.eval(interval.lo());
    if alpha < b_min {
        return Vec::new();
    }
    ParamInterval::new(b_min, alpha).map(|w| w.grid(DEFAULT_T_GRID_POINTS)).unwrap_or_default()
}

/// Picks the grid `t` giving the largest calibrated `lambda` on a holdout set.
/// Candidates outside the valid window are skipped; ties go to the smaller `t`.
pub fn tune_t(
    holdout: &[Loss],
    bound: &BoundFn,
    interval: ParamInterval,
    alpha: f64,
    delta: f64,
    t_grid: &[f64],
    eps: f64,
) -> Result<f64> {
    let b_min = bound.eval(interval.lo());
    let mut best: Option<(f64, f64)> = None;
    for &t in t_grid {
        if !(b_min <= t && t <= alpha) {
            continue;
        }
        let lambda = conformal_cvar_control(holdout, bound, interval, alpha, delta, t, eps)?.lambda_hat;
        best = match best {
            Some((bt, bl)) if bl > lambda || (bl == lambda && bt <= t) => Some((bt, bl)),
            _ => Some((t, lambda)),
        };
    }
    best.map(|(t, _)| t).ok_or(Error::EmptyGrid)
}

/// Largest `lambda` over the convex set `{(lambda, t) : h_tilde_t(lambda) <= alpha,
/// B(lambda_min) <= t <= alpha}` for linear losses and a linear bound.
///
/// Golden-section search over `t` of the inner bisection; `lambda_hat(t)` is concave.
pub fn joint_lambda_t(
    losses: &[LinearLoss],
    bound: &BoundFn,
    interval: ParamInterval,
    alpha: f64,
    delta: f64,
    eps: f64,
) -> Result<CalibrationResult> {
    if !matches!(bound, BoundFn::Linear(_)) {
        return Err(Error::Unsupported("joint (lambda, t) solve needs a linear bound".into()));
    }
    let losses: Vec<Loss> = losses.iter().copied().map(Loss::Linear).collect();
    let b_min = bound.eval(interval.lo());
    if alpha < b_min {
        return conformal_cvar_control(&losses, bound, interval, alpha, delta, b_min, eps);
    }
    let inner = |t: f64| conformal_cvar_control(&losses, bound, interval, alpha, delta, t, eps);
    let (t_best, _) = golden_min(|t| Ok(-inner(t)?.lambda_hat), b_min, alpha, 0.0, JOINT_GOLDEN_ITERS)?;
    inner(t_best)
}
