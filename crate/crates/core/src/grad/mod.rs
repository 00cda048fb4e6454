//! Derivatives of the calibrated threshold `lambda(theta)` with respect to model parameters.

mod conftr;
mod kkt;
mod piecewise;

pub use conftr::conftr_quantile_grad;
pub use kkt::{lambda_grad_joint, lambda_grad_kkt, InnerObjective, LinearRiskProblem, Objective, KINK_TOLERANCE};
pub use piecewise::{averaged_threshold_grad, lambda_grad_piecewise, Threshold, ThresholdLoss, TIE_TOLERANCE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradKind {
    /// Constraint never binds; `lambda = lambda_max`.
    InteriorMax,
    /// `lambda` sits on a threshold; `index` is its rank in the merged ascending sequence.
    ActiveJump { index: usize },
    Kkt { mu: f64 },
    /// Infeasible even at `lambda_min`.
    FallbackZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrad {
    pub value: f64,
    pub grad: Vec<f64>,
    pub kind: GradKind,
}

impl LambdaGrad {
    pub(crate) fn constant(value: f64, dim: usize, kind: GradKind) -> Self {
        Self { value, grad: vec![0.0; dim], kind }
    }
}

/// `dl/dtheta = dl/dtheta|_lambda + dl/dlambda * dlambda/dtheta`.
pub fn full_cost_grad(lambda_grad: &LambdaGrad, partial_theta: &[f64], partial_lambda: f64) -> Result<Vec<f64>> {
    if partial_theta.len() != lambda_grad.grad.len() {
        return Err(Error::DimensionMismatch { expected: lambda_grad.grad.len(), found: partial_theta.len() });
    }
    Ok(partial_theta.iter().zip(&lambda_grad.grad).map(|(p, g)| p + partial_lambda * g).collect())
}

/// Central differences of `f` at `theta` with the given step.
pub fn central_difference<F>(mut f: F, theta: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            x[j] = theta[j] + step;
            let up = f(&x);
            x[j] = theta[j] - step;
            let down = f(&x);
            x[j] = theta[j];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max_j |a_j - n_j| / max(1, |a_j|)`.
pub fn relative_gap(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}
