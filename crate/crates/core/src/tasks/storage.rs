//! Single-period storage arbitrage: forecast the price, charge or discharge by the
//! closed-form argmin of `y z + eps z^2` over the rate box, then scale the decision by `lambda`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use super::{dot, least_squares};
use crate::error::{invalid, Error, Result};
use crate::loss::{bound_tolerance, LinearLoss, ParamInterval};

/// Price weights on `(1, x_1, x_2, x_3)`; further features carry no signal.
const PRICE_WEIGHTS: [f64; 4] = [5.0, 15.0, -10.0, 8.0];
const ENVELOPE_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageTaskConfig {
    pub c_in: f64,
    pub c_out: f64,
    pub eps_quad: f64,
    pub delta: f64,
    pub alpha: f64,
    pub bound_slope: f64,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub seed: u64,
    pub feature_dim: usize,
    /// Prices are clipped to `[-price_cap, price_cap]`.
    pub price_cap: f64,
    /// Scale of the Student-t (3 dof) price noise.
    pub noise_scale: f64,
}

impl Default for StorageTaskConfig {
    fn default() -> Self {
        Self {
            c_in: 0.5,
            c_out: 0.2,
            eps_quad: 25.0,
            delta: 0.9,
            alpha: 5.0,
            bound_slope: 100.0,
            n_train: 2000,
            n_cal: 400,
            n_test: 2000,
            seed: 0,
            feature_dim: 4,
            price_cap: 180.0,
            noise_scale: 12.0,
        }
    }
}

impl StorageTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_in > 0.0 && self.c_out > 0.0) {
            return Err(invalid("c_in and c_out must be positive"));
        }
        if !(self.eps_quad > 0.0) {
            return Err(invalid("eps_quad must be positive"));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(invalid(format!("delta must lie in [0, 1), got {}", self.delta)));
        }
        if self.n_train == 0 || self.n_cal == 0 || self.n_test == 0 {
            return Err(invalid("n_train, n_cal and n_test must all be at least 1"));
        }
        if self.feature_dim < 2 {
            return Err(invalid("feature_dim must be at least 2"));
        }
        if !(self.price_cap > 0.0 && self.noise_scale >= 0.0) {
            return Err(invalid("price_cap must be positive and noise_scale nonnegative"));
        }
        if self.max_abs_slope() > ENVELOPE_SAFETY * self.bound_slope {
            return Err(invalid(format!(
                "bound_slope {} is below the generator envelope {} / {ENVELOPE_SAFETY}",
                self.bound_slope,
                self.max_abs_slope()
            )));
        }
        Ok(())
    }

    /// Largest `|z * y|` the generator can produce.
    pub fn max_abs_slope(&self) -> f64 {
        self.c_in.max(self.c_out) * self.price_cap
    }

    pub fn interval(&self) -> ParamInterval {
        ParamInterval::unit()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageExample {
    pub features: Vec<f64>,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageDataset {
    pub train: Vec<StorageExample>,
    pub cal: Vec<StorageExample>,
    pub test: Vec<StorageExample>,
}

/// Net charge; negative values sell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub z: f64,
}

pub fn storage_decision(y_hat: f64, config: &StorageTaskConfig) -> Decision {
    Decision { z: (-y_hat / (2.0 * config.eps_quad)).clamp(-config.c_out, config.c_in) }
}

pub fn storage_example<R: Rng>(config: &StorageTaskConfig, rng: &mut R, noise: &StudentT<f64>) -> StorageExample {
    let mut features = vec![1.0];
    features.extend((1..config.feature_dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let signal: f64 = features.iter().zip(PRICE_WEIGHTS).map(|(x, w)| x * w).sum();
    let price = (signal + config.noise_scale * noise.sample(rng)).clamp(-config.price_cap, config.price_cap);
    StorageExample { features, price }
}

pub fn storage_examples<R: Rng>(config: &StorageTaskConfig, rng: &mut R, n: usize) -> Vec<StorageExample> {
    let noise = StudentT::new(3.0).expect("3 degrees of freedom");
    (0..n).map(|_| storage_example(config, rng, &noise)).collect()
}

pub fn storage_generate(config: &StorageTaskConfig) -> Result<StorageDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(StorageDataset {
        train: storage_examples(config, &mut rng, config.n_train),
        cal: storage_examples(config, &mut rng, config.n_cal),
        test: storage_examples(config, &mut rng, config.n_test),
    })
}

/// Least-squares price forecaster.
pub fn storage_pretrain(examples: &[StorageExample]) -> Result<Vec<f64>> {
    let dim = examples.first().ok_or(Error::EmptySamples)?.features.len();
    least_squares(examples.iter().map(|e| (e.features.as_slice(), e.price)), dim)
}

/// Task loss `f(y, lambda z) = y lambda z + eps (lambda z)^2` of one example at fixed `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageCost {
    pub price: f64,
    pub z_star: f64,
    /// Zero when the decision is clipped.
    pub dz_dtheta: Vec<f64>,
    pub eps_quad: f64,
}

impl StorageCost {
    pub fn new(theta: &[f64], example: &StorageExample, config: &StorageTaskConfig) -> Self {
        let raw = -dot(theta, &example.features) / (2.0 * config.eps_quad);
        let z_star = raw.clamp(-config.c_out, config.c_in);
        let dz_dtheta = if raw > -config.c_out && raw < config.c_in {
            example.features.iter().map(|x| -x / (2.0 * config.eps_quad)).collect()
        } else {
            vec![0.0; theta.len()]
        };
        Self { price: example.price, z_star, dz_dtheta, eps_quad: config.eps_quad }
    }

    pub fn value(&self, lambda: f64) -> f64 {
        let z = lambda * self.z_star;
        self.price * z + self.eps_quad * z * z
    }

    fn marginal(&self, lambda: f64) -> f64 {
        self.price + 2.0 * self.eps_quad * lambda * self.z_star
    }

    pub fn d_lambda(&self, lambda: f64) -> f64 {
        self.marginal(lambda) * self.z_star
    }

    pub fn d2_lambda(&self) -> f64 {
        2.0 * self.eps_quad * self.z_star * self.z_star
    }

    pub fn d_theta(&self, lambda: f64) -> Vec<f64> {
        let m = self.marginal(lambda) * lambda;
        self.dz_dtheta.iter().map(|d| m * d).collect()
    }

    pub fn d_lambda_theta(&self, lambda: f64) -> Vec<f64> {
        let m = self.price + 4.0 * self.eps_quad * lambda * self.z_star;
        self.dz_dtheta.iter().map(|d| m * d).collect()
    }

    /// Financial risk `lambda * z * y` and its slope in `lambda`.
    pub fn slope(&self) -> f64 {
        self.z_star * self.price
    }

    pub fn slope_grad(&self) -> Vec<f64> {
        self.dz_dtheta.iter().map(|d| d * self.price).collect()
    }
}

/// Linear financial-risk losses and task costs, checking every slope against the bound.
pub fn storage_losses(
    theta: &[f64],
    examples: &[StorageExample],
    config: &StorageTaskConfig,
) -> Result<(Vec<LinearLoss>, Vec<StorageCost>)> {
    let costs: Vec<StorageCost> = examples.iter().map(|e| StorageCost::new(theta, e, config)).collect();
    let b = config.bound_slope;
    let losses = costs
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let a = c.slope();
            if a > b + bound_tolerance(b) {
                return Err(Error::BoundViolation { index, lambda: 1.0, loss: a, bound: b });
            }
            LinearLoss::new(a)
        })
        .collect::<Result<_>>()?;
    Ok((losses, costs))
}

/// Decision-focused baseline: gradient descent on the mean task loss at `lambda = 1`,
/// differentiating through the clipped argmin.
pub fn storage_task_finetune(
    theta: &[f64],
    examples: &[StorageExample],
    config: &StorageTaskConfig,
    epochs: usize,
    learning_rate: f64,
) -> Vec<f64> {
    let mut theta = theta.to_vec();
    let n = examples.len().max(1) as f64;
    for _ in 0..epochs {
        let mut g = vec![0.0; theta.len()];
        for e in examples {
            let c = StorageCost::new(&theta, e, config);
            for (gi, di) in g.iter_mut().zip(c.d_theta(1.0)) {
                *gi += di / n;
            }
        }
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= learning_rate * gi;
        }
    }
    theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{central_difference, relative_gap};
    use proptest::prelude::*;

    #[test]
    fn decision_examples() {
        let cfg = StorageTaskConfig::default();
        assert_eq!(storage_decision(0.0, &cfg).z, 0.0);
        assert_eq!(storage_decision(-1e4, &cfg).z, cfg.c_in);
        assert_eq!(storage_decision(2.0 * cfg.eps_quad * cfg.c_out, &cfg).z, -cfg.c_out);
    }

    #[test]
    fn envelope_and_validation() {
        let cfg = StorageTaskConfig::default();
        for seed in 0..5 {
            let data = storage_generate(&StorageTaskConfig { seed, ..cfg.clone() }).unwrap();
            let theta = storage_pretrain(&data.train).unwrap();
            let (losses, _) = storage_losses(&theta, &data.cal, &cfg).unwrap();
            let max = losses.iter().map(|l| l.slope.abs()).fold(0.0, f64::max);
            assert!(max <= 0.9 * cfg.bound_slope);
        }
        assert!(StorageTaskConfig { bound_slope: 80.0, ..cfg.clone() }.validate().is_err());
        assert!(StorageTaskConfig { delta: 1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn selling_into_positive_prices_is_profit() {
        let cfg = StorageTaskConfig { noise_scale: 0.0, ..Default::default() };
        let ex: Vec<StorageExample> =
            [10.0, 40.0, 3.0].iter().map(|&p| StorageExample { features: vec![1.0], price: p }).collect();
        let (losses, costs) = storage_losses(&[25.0], &ex, &cfg).unwrap();
        for (l, c) in losses.iter().zip(&costs) {
            assert!(c.z_star < 0.0);
            assert!(l.slope < 0.0);
        }
        let idle = StorageCost::new(&[0.0], &ex[0], &cfg);
        assert_eq!((idle.slope(), idle.value(0.7)), (0.0, 0.0));
    }

    #[test]
    fn partials_match_fd() {
        let cfg = StorageTaskConfig::default();
        let ex = StorageExample { features: vec![1.0, 0.4, -1.2], price: 13.0 };
        let theta = [4.0, 3.0, 2.0];
        let c = StorageCost::new(&theta, &ex, &cfg);
        let lambda = 0.6;
        let fd = central_difference(|t| StorageCost::new(t, &ex, &cfg).value(lambda), &theta, 1e-6);
        assert!(relative_gap(&c.d_theta(lambda), &fd) < 1e-6);
        let fd = central_difference(|l| c.value(l[0]), &[lambda], 1e-6);
        assert!(relative_gap(&[c.d_lambda(lambda)], &fd) < 1e-6);
        let fd = central_difference(|t| StorageCost::new(t, &ex, &cfg).d_lambda(lambda), &theta, 1e-6);
        assert!(relative_gap(&c.d_lambda_theta(lambda), &fd) < 1e-6);
        let fd = central_difference(|t| StorageCost::new(t, &ex, &cfg).slope(), &theta, 1e-6);
        assert!(relative_gap(&c.slope_grad(), &fd) < 1e-6);
    }

    proptest! {
        #[test]
        fn closed_form_beats_grid(y_hat in -200.0f64..200.0, c_in in 0.05f64..1.0, c_out in 0.05f64..1.0, eps in 0.5f64..80.0) {
            let cfg = StorageTaskConfig { c_in, c_out, eps_quad: eps, ..Default::default() };
            let z = storage_decision(y_hat, &cfg).z;
            let f = |z: f64| y_hat * z + eps * z * z;
            let steps = ((c_in + c_out) / 1e-4) as usize;
            let best = (0..=steps).map(|i| f(-c_out + i as f64 * 1e-4)).fold(f64::INFINITY, f64::min);
            prop_assert!(f(z) <= best + 1e-7);
            for lambda in [0.0, 0.3, 1.0] {
                prop_assert!(-c_out <= lambda * z && lambda * z <= c_in);
            }
        }
    }
}
