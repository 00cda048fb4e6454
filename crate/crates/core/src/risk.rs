//! Disutilities, OCE/CVaR estimators, and the empirical risk functionals `h` and `h_tilde`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loss::{bound_tolerance, BoundFn, Loss, ParamInterval};
use crate::search::golden_min;

const ENTROPIC_GUARD: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disutility {
    Identity,
    /// `[x]_+ / (1 - delta)`
    Cvar { delta: f64 },
    /// `e^x - 1`
    Entropic,
}

impl Disutility {
    pub fn cvar(delta: f64) -> Result<Self> {
        let d = Disutility::Cvar { delta };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Disutility::Cvar { delta } if !(0.0..1.0).contains(&delta) => {
                Err(invalid(format!("cvar level must lie in [0, 1), got {delta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        match *self {
            Disutility::Identity => Ok(x),
            Disutility::Cvar { delta } => Ok(x.max(0.0) / (1.0 - delta)),
            Disutility::Entropic => {
                if x > ENTROPIC_GUARD {
                    Err(Error::NonFiniteObjective { argument: x })
                } else {
                    Ok(x.exp_m1())
                }
            }
        }
    }

    /// Right derivative at the cvar kink.
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Disutility::Identity => 1.0,
            Disutility::Cvar { delta } => {
                if x < 0.0 {
                    0.0
                } else {
                    1.0 / (1.0 - delta)
                }
            }
            Disutility::Entropic => x.min(ENTROPIC_GUARD).exp(),
        }
    }

    /// `None` at the cvar kink.
    pub fn second_deriv(&self, x: f64) -> Option<f64> {
        match *self {
            Disutility::Identity => Some(0.0),
            Disutility::Cvar { .. } => (x != 0.0).then_some(0.0),
            Disutility::Entropic => Some(x.min(ENTROPIC_GUARD).exp()),
        }
    }

    pub fn has_kink(&self) -> bool {
        matches!(self, Disutility::Cvar { .. })
    }

    /// `t + phi(x - t)`; the identity returns `x` untouched so `h_tilde` reduces to `h` exactly.
    pub fn transform(&self, x: f64, t: f64) -> Result<f64> {
        match self {
            Disutility::Identity => Ok(x),
            _ => Ok(t + self.eval(x - t)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub alpha: f64,
    pub t: f64,
    pub disutility: Disutility,
    pub interval: ParamInterval,
}

impl RiskSpec {
    pub fn new(alpha: f64, t: f64, disutility: Disutility, interval: ParamInterval) -> Result<Self> {
        if !alpha.is_finite() || !t.is_finite() {
            return Err(invalid("alpha and t must be finite"));
        }
        disutility.validate()?;
        Ok(Self { alpha, t, disutility, interval })
    }

    /// Expected-loss control: identity disutility, `t` unused.
    pub fn expectation(alpha: f64, interval: ParamInterval) -> Result<Self> {
        Self::new(alpha, 0.0, Disutility::Identity, interval)
    }

    /// Whether `B(lambda_min) <= t <= alpha`, the window in which cvar control is valid
    /// for merely monotone losses.
    pub fn t_window_valid(&self, bound: &BoundFn) -> bool {
        let b_min = bound.eval(self.interval.lo());
        b_min <= self.t && self.t <= self.alpha
    }
}

/// Averages `t + phi(v - t)` over the bound value and the loss values, bound first.
pub(crate) fn transformed_mean<I>(bound_value: f64, values: I, lambda: f64, t: f64, phi: &Disutility) -> Result<f64>
where
    I: IntoIterator<Item = f64>,
{
    let limit = bound_value + bound_tolerance(bound_value);
    let mut sum = phi.transform(bound_value, t)?;
    let mut n = 0usize;
    for (index, v) in values.into_iter().enumerate() {
        if v > limit {
            return Err(Error::BoundViolation { index, lambda, loss: v, bound: bound_value });
        }
        sum += phi.transform(v, t)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyCalibration);
    }
    Ok(sum / (n + 1) as f64)
}

/// `(B(lambda) + sum_i L_i(lambda)) / (N + 1)`.
pub fn empirical_h(losses: &[Loss], bound: &BoundFn, lambda: f64) -> Result<f64> {
    empirical_h_tilde(losses, bound, lambda, 0.0, &Disutility::Identity)
}

/// `(t + phi(B - t) + sum_i (t + phi(L_i - t))) / (N + 1)`.
pub fn empirical_h_tilde(losses: &[Loss], bound: &BoundFn, lambda: f64, t: f64, phi: &Disutility) -> Result<f64> {
    transformed_mean(bound.eval(lambda), losses.iter().map(|l| l.eval(lambda)), lambda, t, phi)
}

fn cvar_objective_sorted(sorted: &[f64], t: f64, delta: f64) -> f64 {
    let tail: f64 = sorted.iter().rev().take_while(|&&x| x > t).map(|&x| x - t).sum();
    t + tail / (sorted.len() as f64 * (1.0 - delta))
}

/// Empirical CVaR at level `delta`: the variational objective evaluated at the lower
/// empirical `delta`-quantile.
pub fn cvar_empirical(samples: &[f64], delta: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    Disutility::cvar(delta)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((n as f64 * delta).ceil() as usize).clamp(1, n);
    // Neighbours absorb rounding in n * delta; the objective is flat between them when n * delta is integral.
    let value = (k.saturating_sub(1).max(1)..=(k + 1).min(n))
        .map(|j| cvar_objective_sorted(&sorted, sorted[j - 1], delta))
        .fold(f64::INFINITY, f64::min);
    Ok(value)
}

/// `inf_t t + mean(phi(x_i - t))` by golden-section search over the sample range.
pub fn oce_risk_empirical(samples: &[f64], phi: &Disutility) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    phi.validate()?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = samples.len() as f64;
    let objective = |t: f64| -> Result<f64> {
        let mut acc = 0.0;
        for &x in samples {
            acc += phi.eval(x - t)?;
        }
        Ok(t + acc / n)
    };
    let (_, value) = golden_min(objective, lo, hi, 1e-10, 1000)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{LinearLoss, StepLoss};
    use proptest::prelude::*;

    fn kinds() -> [Disutility; 4] {
        [
            Disutility::Identity,
            Disutility::Cvar { delta: 0.0 },
            Disutility::Cvar { delta: 0.9 },
            Disutility::Entropic,
        ]
    }

    fn indicators(qs: &[f64]) -> Vec<Loss> {
        qs.iter().map(|&q| Loss::Step(StepLoss::indicator(q).unwrap())).collect()
    }

    #[test]
    fn disutility_axioms_on_grid() {
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 / 8.0).collect();
        for phi in kinds() {
            assert_eq!(phi.eval(0.0).unwrap(), 0.0);
            for w in grid.windows(2) {
                assert!(phi.eval(w[0]).unwrap() <= phi.eval(w[1]).unwrap());
            }
            for &x in &grid {
                assert!(phi.eval(x).unwrap() >= x, "{phi:?} at {x}");
                for &y in &grid {
                    let mid = phi.eval(0.5 * (x + y)).unwrap();
                    let chord = 0.5 * (phi.eval(x).unwrap() + phi.eval(y).unwrap());
                    assert!(mid <= chord + 1e-12);
                }
            }
        }
    }

    #[test]
    fn closed_forms() {
        let c = Disutility::cvar(0.75).unwrap();
        assert_eq!(c.eval(2.0).unwrap(), 8.0);
        assert_eq!(c.eval(-2.0).unwrap(), 0.0);
        let e = Disutility::Entropic;
        for x in [-3.0, 0.5, 2.0] {
            let v: f64 = e.eval(x).unwrap();
            assert!((v - (x.exp() - 1.0)).abs() <= 1e-14 * x.exp());
        }
        assert!(matches!(e.eval(701.0), Err(Error::NonFiniteObjective { .. })));
        assert!(Disutility::cvar(1.0).is_err());
        assert_eq!(c.second_deriv(0.0), None);
        assert_eq!(c.deriv(-1.0), 0.0);
        assert_eq!(c.deriv(1.0), 4.0);
    }

    #[test]
    fn h_examples() {
        let losses = indicators(&[0.2, 0.4, 0.6, 0.8]);
        let one = BoundFn::Constant(1.0);
        assert!((empirical_h(&losses, &one, 0.5).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(empirical_h(&losses, &BoundFn::Constant(0.0), 0.1).unwrap(), 0.0);
        let lin = vec![Loss::Linear(LinearLoss::new(1.0).unwrap())];
        assert_eq!(empirical_h(&lin, &BoundFn::Linear(1.0), 0.5).unwrap(), 0.5);
        assert_eq!(empirical_h(&[], &one, 0.5), Err(Error::EmptyCalibration));
        let over = vec![Loss::Linear(LinearLoss::new(2.0).unwrap())];
        assert!(matches!(
            empirical_h(&over, &BoundFn::Linear(1.0), 0.5),
            Err(Error::BoundViolation { index: 0, .. })
        ));
    }

    #[test]
    fn h_tilde_examples() {
        let two = vec![Loss::Step(StepLoss::new(2.0, []).unwrap())];
        let v = empirical_h_tilde(&two, &BoundFn::Constant(2.0), 0.3, 1.0, &Disutility::cvar(0.5).unwrap()).unwrap();
        assert_eq!(v, 3.0);
        let losses = indicators(&[0.2, 0.4]);
        let v = empirical_h_tilde(&losses, &BoundFn::Constant(1.0), 0.9, 1.5, &Disutility::cvar(0.3).unwrap()).unwrap();
        assert_eq!(v, 1.5);
    }

    #[test]
    fn cvar_examples() {
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((cvar_empirical(&ten, 0.8).unwrap() - 9.5).abs() < 1e-12);
        assert_eq!(cvar_empirical(&[3.25; 7], 0.9).unwrap(), 3.25);
        assert!((cvar_empirical(&ten, 0.0).unwrap() - 5.5).abs() < 1e-12);
        assert_eq!(cvar_empirical(&[], 0.5), Err(Error::EmptySamples));
        assert!(cvar_empirical(&ten, 1.0).is_err());
    }

    #[test]
    fn oce_examples() {
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((oce_risk_empirical(&ten, &Disutility::Identity).unwrap() - 5.5).abs() < 1e-12);
        assert!((oce_risk_empirical(&ten, &Disutility::cvar(0.8).unwrap()).unwrap() - 9.5).abs() < 1e-9);
        assert_eq!(oce_risk_empirical(&[0.0; 5], &Disutility::Entropic).unwrap(), 0.0);
        let mean_exp = ten.iter().map(|x| x.exp()).sum::<f64>() / 10.0;
        let entropic = oce_risk_empirical(&ten, &Disutility::Entropic).unwrap();
        assert!((entropic - mean_exp.ln()).abs() < 1e-9);
        assert!(matches!(
            oce_risk_empirical(&[0.0, 800.0], &Disutility::Entropic),
            Err(Error::NonFiniteObjective { .. })
        ));
    }

    #[test]
    fn t_window() {
        let unit = ParamInterval::unit();
        let spec = RiskSpec::new(0.5, 0.2, Disutility::cvar(0.9).unwrap(), unit).unwrap();
        assert!(spec.t_window_valid(&BoundFn::Linear(1.0)));
        assert!(!spec.t_window_valid(&BoundFn::Constant(0.3)));
    }

    fn step_set() -> impl Strategy<Value = Vec<Loss>> {
        prop::collection::vec(
            prop::collection::vec((0.0f64..1.0, 0.0f64..0.3), 0..4).prop_map(|j| {
                let base = 0.0;
                Loss::Step(StepLoss::new(base, j).unwrap())
            }),
            1..8,
        )
    }

    proptest! {
        #[test]
        fn identity_h_tilde_is_h_bitwise(losses in step_set(), lambda in 0.0f64..1.0, t in -2.0f64..2.0) {
            let bound = BoundFn::Constant(1.2);
            let h = empirical_h(&losses, &bound, lambda).unwrap();
            let ht = empirical_h_tilde(&losses, &bound, lambda, t, &Disutility::Identity).unwrap();
            prop_assert_eq!(h.to_bits(), ht.to_bits());
        }

        #[test]
        fn h_tilde_monotone_in_lambda(losses in step_set(), t in -1.0f64..1.5, k in 0usize..4) {
            let bound = BoundFn::Constant(1.2);
            let phi = kinds()[k];
            let grid = ParamInterval::unit().grid(201);
            let vals: Vec<f64> = grid.iter().map(|&l| empirical_h_tilde(&losses, &bound, l, t, &phi).unwrap()).collect();
            for w in vals.windows(2) {
                prop_assert!(w[0] <= w[1] + 1e-12);
            }
        }

        #[test]
        fn h_tilde_convex_in_t(losses in step_set(), lambda in 0.0f64..1.0, t1 in -1.0f64..1.5, t2 in -1.0f64..1.5, k in 0usize..4) {
            let bound = BoundFn::Constant(1.2);
            let phi = kinds()[k];
            let f = |t: f64| empirical_h_tilde(&losses, &bound, lambda, t, &phi).unwrap();
            prop_assert!(f(0.5 * (t1 + t2)) <= 0.5 * (f(t1) + f(t2)) + 1e-10);
        }

        #[test]
        fn cvar_dominates_mean_and_is_equivariant(
            xs in prop::collection::vec(-10.0f64..10.0, 1..60),
            delta in 0.0f64..0.99,
            shift in -5.0f64..5.0,
            scale in 0.0f64..4.0,
        ) {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let c = cvar_empirical(&xs, delta).unwrap();
            prop_assert!(c >= mean - 1e-9);
            prop_assert!((cvar_empirical(&xs, 0.0).unwrap() - mean).abs() < 1e-9);
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            prop_assert!((cvar_empirical(&shifted, delta).unwrap() - (c + shift)).abs() < 1e-9);
            let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
            prop_assert!((cvar_empirical(&scaled, delta).unwrap() - c * scale).abs() < 1e-9 * (1.0 + scale));
        }

        #[test]
        fn oce_cvar_matches_closed_form(xs in prop::collection::vec(-10.0f64..10.0, 1..60), delta in 0.0f64..0.99) {
            let closed = cvar_empirical(&xs, delta).unwrap();
            let numeric = oce_risk_empirical(&xs, &Disutility::cvar(delta).unwrap()).unwrap();
            prop_assert!((closed - numeric).abs() <= 1e-9 * closed.abs().max(1.0), "{} vs {}", closed, numeric);
        }
    }
}
