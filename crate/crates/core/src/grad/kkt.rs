use crate::calibrate::{joint_lambda_t, CalibrationResult};
use crate::error::{invalid, Error, Result};
use crate::loss::{BoundFn, LinearLoss, ParamInterval};
use crate::risk::{transformed_mean, Disutility};
use crate::search::bisect_last_true;

use super::{GradKind, LambdaGrad};

pub const KINK_TOLERANCE: f64 = 1e-9;
const MAX_CONDITION: f64 = 1e12;

/// Cost side of the inner problem when it is strictly convex in `lambda`.
pub trait InnerObjective {
    fn d_lambda(&self, lambda: f64) -> f64;
    fn d2_lambda(&self, lambda: f64) -> f64;
    fn d_lambda_theta(&self, lambda: f64) -> Vec<f64>;
}

pub enum Objective<'a> {
    StrictlyIncreasing,
    StrictlyDecreasing,
    StrictlyConvex(&'a dyn InnerObjective),
}

/// `min l(lambda) s.t. h_tilde_t(lambda) <= alpha, lambda in interval` with linear losses
/// `a_i(theta) * lambda` and bound `b * lambda`.
#[derive(Debug, Clone, Copy)]
pub struct LinearRiskProblem<'a> {
    pub slopes: &'a [f64],
    /// `d a_i / d theta`
    pub slope_grads: &'a [Vec<f64>],
    pub bound_slope: f64,
    pub disutility: Disutility,
    pub t: f64,
    pub alpha: f64,
    pub interval: ParamInterval,
}

struct Derivs {
    h_l: f64,
    h_ll: f64,
    h_t: Vec<f64>,
    h_lt: Vec<f64>,
}

impl LinearRiskProblem<'_> {
    fn dim(&self) -> Result<usize> {
        if self.slopes.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        if self.slopes.len() != self.slope_grads.len() {
            return Err(Error::DimensionMismatch { expected: self.slopes.len(), found: self.slope_grads.len() });
        }
        let dim = self.slope_grads[0].len();
        match self.slope_grads.iter().find(|g| g.len() != dim) {
            Some(g) => Err(Error::DimensionMismatch { expected: dim, found: g.len() }),
            None => Ok(dim),
        }
    }

    fn h(&self, lambda: f64) -> Result<f64> {
        let values = self.slopes.iter().map(|a| a * lambda);
        transformed_mean(self.bound_slope * lambda, values, lambda, self.t, &self.disutility)
    }

    fn check_kink(&self, lambda: f64) -> Result<()> {
        if !self.disutility.has_kink() {
            return Ok(());
        }
        let at_kink = std::iter::once(&self.bound_slope)
            .chain(self.slopes)
            .any(|a| (a * lambda - self.t).abs() < KINK_TOLERANCE);
        if at_kink {
            Err(Error::KinkAtSolution { lambda })
        } else {
            Ok(())
        }
    }

    fn derivs(&self, lambda: f64, dim: usize) -> Result<Derivs> {
        let phi = &self.disutility;
        let scale = 1.0 / (self.slopes.len() + 1) as f64;
        let second = |x: f64| phi.second_deriv(x).ok_or(Error::KinkAtSolution { lambda });
        let xb = self.bound_slope * lambda - self.t;
        let mut h_l = phi.deriv(xb) * self.bound_slope;
        let mut h_ll = second(xb)? * self.bound_slope * self.bound_slope;
        let mut h_t = vec![0.0; dim];
        let mut h_lt = vec![0.0; dim];
        for (a, da) in self.slopes.iter().zip(self.slope_grads) {
            let x = a * lambda - self.t;
            let (d1, d2) = (phi.deriv(x), second(x)?);
            h_l += d1 * a;
            h_ll += d2 * a * a;
            for j in 0..dim {
                h_t[j] += d1 * lambda * da[j];
                h_lt[j] += d2 * a * lambda * da[j] + d1 * da[j];
            }
        }
        h_t.iter_mut().chain(h_lt.iter_mut()).for_each(|v| *v *= scale);
        Ok(Derivs { h_l: h_l * scale, h_ll: h_ll * scale, h_t, h_lt })
    }

    /// Upper end of the feasible interval, resolved to one ulp; `None` if `lambda_min` is infeasible.
    fn feasible_max(&self) -> Result<Option<f64>> {
        let (lo, hi) = (self.interval.lo(), self.interval.hi());
        if self.h(lo)? > self.alpha {
            return Ok(None);
        }
        if self.h(hi)? <= self.alpha {
            return Ok(Some(hi));
        }
        bisect_last_true(|l| Ok(self.h(l)? <= self.alpha), lo, hi).map(Some)
    }
}

fn condition_number(m: [[f64; 2]; 2]) -> f64 {
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).abs();
    let fro2: f64 = m.iter().flatten().map(|v| v * v).sum();
    if det == 0.0 {
        return f64::INFINITY;
    }
    // Singular values satisfy s1^2 + s2^2 = fro2 and s1 * s2 = det.
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
    let s1 = ((fro2 + disc) / 2.0).sqrt();
    s1 * s1 / det
}

/// Differentiates the active-constraint KKT system `[l_ll + mu h_ll, h_l; mu h_l, h - alpha]`.
fn active_kkt_grad(
    lambda: f64,
    mu: f64,
    l_ll: f64,
    l_lt: &[f64],
    d: &Derivs,
) -> Result<LambdaGrad> {
    let m = [[l_ll + mu * d.h_ll, d.h_l], [mu * d.h_l, 0.0]];
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularKkt { condition });
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let grad = (0..d.h_t.len())
        .map(|j| {
            let r0 = l_lt[j] + mu * d.h_lt[j];
            let r1 = mu * d.h_t[j];
            -(m[1][1] * r0 - m[0][1] * r1) / det
        })
        .collect();
    Ok(LambdaGrad { value: lambda, grad, kind: GradKind::Kkt { mu } })
}

/// `lambda(theta)` and its derivative for the scalar convex inner problem, by implicit
/// differentiation of the KKT conditions.
pub fn lambda_grad_kkt(problem: &LinearRiskProblem, objective: Objective) -> Result<LambdaGrad> {
    let dim = problem.dim()?;
    problem.disutility.validate()?;
    if !(problem.bound_slope >= 0.0) {
        return Err(invalid("bound slope must be nonnegative"));
    }
    let (lo, hi) = (problem.interval.lo(), problem.interval.hi());
    let Some(top) = problem.feasible_max()? else {
        return Ok(LambdaGrad::constant(lo, dim, GradKind::FallbackZero));
    };
    let slack_at = |l: f64| -> Result<bool> { Ok(problem.h(l)? < problem.alpha) };
    match objective {
        Objective::StrictlyIncreasing => Ok(LambdaGrad::constant(lo, dim, GradKind::Kkt { mu: 0.0 })),
        Objective::StrictlyDecreasing => {
            if top == hi && slack_at(hi)? {
                return Ok(LambdaGrad::constant(hi, dim, GradKind::InteriorMax));
            }
            problem.check_kink(top)?;
            let d = problem.derivs(top, dim)?;
            active_kkt_grad(top, 1.0 / d.h_l, 0.0, &vec![0.0; dim], &d)
        }
        Objective::StrictlyConvex(f) => {
            let unconstrained = if f.d_lambda(lo) >= 0.0 {
                lo
            } else if f.d_lambda(hi) <= 0.0 {
                hi
            } else {
                bisect_last_true(|l| Ok(f.d_lambda(l) < 0.0), lo, hi)?
            };
            if unconstrained < top || (unconstrained == top && slack_at(top)?) {
                if unconstrained == hi {
                    return Ok(LambdaGrad::constant(hi, dim, GradKind::InteriorMax));
                }
                if unconstrained == lo {
                    return Ok(LambdaGrad::constant(lo, dim, GradKind::Kkt { mu: 0.0 }));
                }
                let l_ll = f.d2_lambda(unconstrained);
                if !(l_ll > 0.0) {
                    return Err(Error::SingularKkt { condition: f64::INFINITY });
                }
                let grad = f.d_lambda_theta(unconstrained).iter().map(|v| -v / l_ll).collect();
                return Ok(LambdaGrad { value: unconstrained, grad, kind: GradKind::Kkt { mu: 0.0 } });
            }
            problem.check_kink(top)?;
            let d = problem.derivs(top, dim)?;
            let mu = -f.d_lambda(top) / d.h_l;
            active_kkt_grad(top, mu, f.d2_lambda(top), &f.d_lambda_theta(top), &d)
        }
    }
}

/// Calibrates `(lambda, t)` jointly and differentiates the maximal `lambda` through the
/// optimal `t`.
///
/// If the optimal `t` sits on a window end, or on a flat stretch of `t`, the fixed-`t`
/// formula applies. If it sits on the kink of sample `j` (`t = c_j * lambda`), the
/// solution moves along that kink and `lambda` solves `G(lambda) = H(lambda, c_j lambda) = alpha`.
pub fn lambda_grad_joint(
    slopes: &[f64],
    slope_grads: &[Vec<f64>],
    bound_slope: f64,
    interval: ParamInterval,
    alpha: f64,
    delta: f64,
    eps: f64,
) -> Result<(CalibrationResult, LambdaGrad)> {
    let phi = Disutility::cvar(delta)?;
    let base = LinearRiskProblem { slopes, slope_grads, bound_slope, disutility: phi, t: 0.0, alpha, interval };
    let dim = base.dim()?;
    let losses: Vec<LinearLoss> = slopes.iter().map(|&a| LinearLoss::new(a)).collect::<Result<_>>()?;
    let cal = joint_lambda_t(&losses, &BoundFn::linear(bound_slope)?, interval, alpha, delta, eps)?;
    let (lo, hi) = (interval.lo(), interval.hi());
    if !cal.feasible {
        return Ok((cal, LambdaGrad::constant(lo, dim, GradKind::FallbackZero)));
    }
    if cal.lambda_hat == hi {
        return Ok((cal, LambdaGrad::constant(hi, dim, GradKind::InteriorMax)));
    }
    let (lambda, t) = (cal.lambda_hat, cal.t_used);
    let t_lo = bound_slope * lo;
    let tol = 1e-6 * alpha.abs().max(1.0);
    let fixed = |t: f64| {
        let p = LinearRiskProblem { t, ..base };
        lambda_grad_kkt(&p, Objective::StrictlyDecreasing)
    };
    if (t - t_lo).abs() < tol {
        return Ok((cal, fixed(t_lo)?));
    }
    if (t - alpha).abs() < tol {
        return Ok((cal, fixed(alpha)?));
    }
    // Sample whose kink is nearest the optimal t; None stands for the bound.
    let kink = std::iter::once((None, bound_slope))
        .chain(slopes.iter().enumerate().map(|(i, &a)| (Some(i), a)))
        .map(|(j, c)| (j, c, (c * lambda - t).abs()))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .filter(|k| k.2 < tol);
    let Some((j, c, _)) = kink else {
        return Ok((cal, fixed(t)?));
    };
    Ok((cal, kink_path_grad(&base, j, c, lambda, dim)?))
}

fn kink_path_grad(p: &LinearRiskProblem, j: Option<usize>, c: f64, guess: f64, dim: usize) -> Result<LambdaGrad> {
    let Disutility::Cvar { delta } = p.disutility else {
        return Err(Error::Unsupported("kink tracking needs the cvar disutility".into()));
    };
    let g = |l: f64| -> Result<f64> {
        let q = LinearRiskProblem { t: c * l, ..*p };
        q.h(l)
    };
    let (lo, hi) = (p.interval.lo(), p.interval.hi());
    let w = 1e-6 * guess.abs().max(1.0);
    let (a, b) = ((guess - w).max(lo), (guess + w).min(hi));
    if !(g(a)? <= p.alpha && g(b)? > p.alpha) {
        return Err(Error::KinkAtSolution { lambda: guess });
    }
    let lambda = bisect_last_true(|l| Ok(g(l)? <= p.alpha), a, b)?;
    let t = c * lambda;
    let dc: Vec<f64> = match j {
        Some(i) => p.slope_grads[i].clone(),
        None => vec![0.0; dim],
    };
    let slope = 1.0 / (1.0 - delta);
    let dphi = |x: f64| if x > 0.0 { slope } else { 0.0 };
    let n1 = (p.slopes.len() + 1) as f64;
    let mut g_l = n1 * c;
    let mut g_t: Vec<f64> = dc.iter().map(|v| n1 * lambda * v).collect();
    let mut add = |a: f64, da: Option<&[f64]>| -> Result<()> {
        let x = a * lambda - t;
        if x.abs() < KINK_TOLERANCE {
            return Err(Error::KinkAtSolution { lambda });
        }
        let d = dphi(x);
        g_l += d * (a - c);
        for k in 0..dim {
            let da_k = da.map_or(0.0, |v| v[k]);
            g_t[k] += d * lambda * (da_k - dc[k]);
        }
        Ok(())
    };
    if j.is_some() {
        add(p.bound_slope, None)?;
    }
    for (i, (&a, da)) in p.slopes.iter().zip(p.slope_grads).enumerate() {
        if Some(i) != j {
            add(a, Some(da))?;
        }
    }
    let g_l = g_l / n1;
    if !(g_l > 0.0) {
        return Err(Error::SingularKkt { condition: f64::INFINITY });
    }
    let grad = g_t.iter().map(|v| -(v / n1) / g_l).collect();
    Ok(LambdaGrad { value: lambda, grad, kind: GradKind::Kkt { mu: 1.0 / g_l } })
}
