use crate::error::{Error, Result};
use crate::loss::{BoundFn, StepLoss};
use crate::risk::{transformed_mean, RiskSpec};

use super::{GradKind, LambdaGrad};

pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub location: f64,
    /// `d location / d theta`
    pub grad: Vec<f64>,
    pub size: f64,
}

/// `base + sum_j size_j * 1[location_j < lambda]` with differentiable locations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdLoss {
    pub base: f64,
    pub thresholds: Vec<Threshold>,
}

impl ThresholdLoss {
    pub fn to_step_loss(&self) -> Result<StepLoss> {
        StepLoss::new(self.base, self.thresholds.iter().map(|t| (t.location, t.size)))
    }
}

struct Event<'a> {
    location: f64,
    size: f64,
    /// `None` for bound jumps.
    owner: Option<(usize, &'a [f64])>,
}

/// `lambda(theta)` for step losses with differentiable jump locations.
///
/// Walks the merged ascending thresholds; `lambda` is the first one after which
/// `h_tilde` exceeds `alpha`, and its gradient is that threshold's gradient.
pub fn lambda_grad_piecewise(
    losses: &[ThresholdLoss],
    bound: &BoundFn,
    spec: &RiskSpec,
    dim: usize,
) -> Result<LambdaGrad> {
    if losses.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let (bound_base, bound_jumps): (f64, Vec<(f64, f64)>) = match bound {
        BoundFn::Constant(b) => (*b, Vec::new()),
        BoundFn::Step(s) => (s.base(), s.jumps().collect()),
        BoundFn::Linear(_) => {
            return Err(Error::Unsupported("piecewise gradient needs a piecewise-constant bound".into()))
        }
    };
    let mut events: Vec<Event> = bound_jumps.iter().map(|&(location, size)| Event { location, size, owner: None }).collect();
    for (i, loss) in losses.iter().enumerate() {
        for th in &loss.thresholds {
            if th.grad.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: th.grad.len() });
            }
            if !(th.size >= 0.0) || !th.location.is_finite() {
                return Err(crate::error::invalid(format!("bad threshold ({}, {})", th.location, th.size)));
            }
            events.push(Event { location: th.location, size: th.size, owner: Some((i, &th.grad)) });
        }
    }
    events.sort_by(|a, b| a.location.total_cmp(&b.location));
    if let Some(w) = events.windows(2).find(|w| w[1].location - w[0].location < TIE_TOLERANCE) {
        return Err(Error::TieDetected { location: w[0].location });
    }

    let (lo, hi) = (spec.interval.lo(), spec.interval.hi());
    let (t, phi) = (spec.t, spec.disutility);
    let mut prefix = vec![0.0; losses.len()];
    let mut bound_prefix = 0.0;
    let h = |prefix: &[f64], bound_prefix: f64, lambda: f64| {
        let values = losses.iter().zip(prefix).map(|(l, p)| l.base + p);
        transformed_mean(bound_base + bound_prefix, values, lambda, t, &phi)
    };

    let mut events = events.into_iter().enumerate().peekable();
    while let Some((_, e)) = events.next_if(|(_, e)| e.location < lo) {
        match e.owner {
            Some((i, _)) => prefix[i] += e.size,
            None => bound_prefix += e.size,
        }
    }
    if h(&prefix, bound_prefix, lo)? > spec.alpha {
        return Ok(LambdaGrad::constant(lo, dim, GradKind::FallbackZero));
    }
    for (index, e) in events {
        if e.location >= hi {
            break;
        }
        match e.owner {
            Some((i, _)) => prefix[i] += e.size,
            None => bound_prefix += e.size,
        }
        if h(&prefix, bound_prefix, e.location)? > spec.alpha {
            let grad = match e.owner {
                Some((_, g)) => g.to_vec(),
                None => vec![0.0; dim],
            };
            return Ok(LambdaGrad { value: e.location, grad, kind: GradKind::ActiveJump { index } });
        }
    }
    Ok(LambdaGrad::constant(hi, dim, GradKind::InteriorMax))
}

/// Mean threshold gradient over the `m` thresholds nearest to `lambda`; a lower-variance
/// stand-in for the single active threshold's gradient.
pub fn averaged_threshold_grad(losses: &[ThresholdLoss], lambda: f64, m: usize, dim: usize) -> Vec<f64> {
    let mut all: Vec<&Threshold> = losses.iter().flat_map(|l| &l.thresholds).collect();
    all.sort_by(|a, b| {
        (a.location - lambda)
            .abs()
            .total_cmp(&(b.location - lambda).abs())
            .then(a.location.total_cmp(&b.location))
    });
    let chosen = &all[..m.min(all.len())];
    let mut out = vec![0.0; dim];
    if chosen.is_empty() {
        return out;
    }
    for th in chosen {
        for (o, g) in out.iter_mut().zip(&th.grad) {
            *o += g;
        }
    }
    let k = chosen.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}
