//! Conformal training demo: softmax classifier, threshold set `{k : p_k >= lambda}`,
//! quantile threshold with exact gradient, and a soft set-size cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{dot, sigmoid, CostPartials};
use crate::error::{invalid, Result};
use crate::grad::{conftr_quantile_grad, LambdaGrad};
use crate::loss::{Loss, ParamInterval, StepLoss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfTrConfig {
    pub n_classes: usize,
    /// Including the intercept; at least 3.
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub temperature: f64,
    /// Radius of the ring of class means.
    pub separation: f64,
    pub seed: u64,
}

impl Default for ConfTrConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            feature_dim: 3,
            n_train: 1000,
            n_cal: 200,
            n_test: 1000,
            alpha: 0.1,
            temperature: 0.1,
            separation: 1.5,
            seed: 0,
        }
    }
}

impl ConfTrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.feature_dim < 3 {
            return Err(invalid("need at least 2 classes and feature_dim >= 3"));
        }
        if self.n_train == 0 || self.n_cal == 0 || self.n_test == 0 {
            return Err(invalid("n_train, n_cal and n_test must all be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.temperature > 0.0) {
            return Err(invalid("alpha must lie in (0, 1) and temperature be positive"));
        }
        Ok(())
    }

    pub fn param_dim(&self) -> usize {
        self.n_classes * self.feature_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfTrDataset {
    pub train: Vec<ClassExample>,
    pub cal: Vec<ClassExample>,
    pub test: Vec<ClassExample>,
}

pub fn conftr_example<R: Rng>(config: &ConfTrConfig, rng: &mut R) -> ClassExample {
    let label = rng.random_range(0..config.n_classes);
    let angle = std::f64::consts::TAU * label as f64 / config.n_classes as f64;
    let mut features = vec![1.0];
    for k in 1..config.feature_dim {
        let shift = match k {
            1 => config.separation * angle.cos(),
            2 => config.separation * angle.sin(),
            _ => 0.0,
        };
        features.push(shift + rng.sample::<f64, _>(StandardNormal));
    }
    ClassExample { features, label }
}

pub fn conftr_generate(config: &ConfTrConfig) -> Result<ConfTrDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |n| (0..n).map(|_| conftr_example(config, &mut rng)).collect();
    Ok(ConfTrDataset { train: draw(config.n_train), cal: draw(config.n_cal), test: draw(config.n_test) })
}

/// Class probabilities of the linear softmax model; `theta` is `classes x dim` row-major.
pub fn probabilities(theta: &[f64], x: &[f64]) -> Vec<f64> {
    let dim = x.len();
    let logits: Vec<f64> = theta.chunks(dim).map(|row| dot(row, x)).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.iter().map(|e| e / total).collect()
}

/// `d p_k / d theta` for the softmax model.
fn prob_grad(p: &[f64], k: usize, x: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(p.len() * x.len());
    for (c, &pc) in p.iter().enumerate() {
        let w = p[k] * (f64::from(u8::from(c == k)) - pc);
        g.extend(x.iter().map(|xi| w * xi));
    }
    g
}

/// Nonconformity `1 - p_y` of each example's true class, with its gradient.
pub fn conftr_scores(theta: &[f64], examples: &[ClassExample]) -> Vec<(f64, Vec<f64>)> {
    examples
        .iter()
        .map(|e| {
            let p = probabilities(theta, &e.features);
            (1.0 - p[e.label], prob_grad(&p, e.label, &e.features).iter().map(|g| -g).collect())
        })
        .collect()
}

/// Miscoverage `1[p_y < lambda]` as a step loss.
pub fn conftr_miscoverage_losses(theta: &[f64], examples: &[ClassExample]) -> Result<Vec<Loss>> {
    examples
        .iter()
        .map(|e| StepLoss::indicator(probabilities(theta, &e.features)[e.label]).map(Loss::Step))
        .collect()
}

/// `sum_k sigmoid((p_k - lambda) / T)`.
pub fn soft_set_size(theta: &[f64], lambda: f64, example: &ClassExample, temperature: f64) -> CostPartials {
    let p = probabilities(theta, &example.features);
    let mut value = 0.0;
    let mut d_lambda = 0.0;
    let mut d_theta = vec![0.0; theta.len()];
    for k in 0..p.len() {
        let s = sigmoid((p[k] - lambda) / temperature);
        let slope = s * (1.0 - s) / temperature;
        value += s;
        d_lambda -= slope;
        for (g, dp) in d_theta.iter_mut().zip(prob_grad(&p, k, &example.features)) {
            *g += slope * dp;
        }
    }
    CostPartials { value, d_theta, d_lambda }
}

/// `(set size, covered)` of the hard prediction set.
pub fn prediction_set(theta: &[f64], lambda: f64, example: &ClassExample) -> (usize, bool) {
    let p = probabilities(theta, &example.features);
    (p.iter().filter(|&&pk| pk >= lambda).count(), p[example.label] >= lambda)
}

/// Softmax regression by full-batch gradient descent on cross-entropy.
pub fn conftr_pretrain(examples: &[ClassExample], config: &ConfTrConfig, epochs: usize, learning_rate: f64) -> Vec<f64> {
    let mut theta = vec![0.0; config.param_dim()];
    let n = examples.len().max(1) as f64;
    for _ in 0..epochs {
        let mut g = vec![0.0; theta.len()];
        for e in examples {
            let p = probabilities(&theta, &e.features);
            for (c, pc) in p.iter().enumerate() {
                let w = pc - f64::from(u8::from(c == e.label));
                for (j, x) in e.features.iter().enumerate() {
                    g[c * config.feature_dim + j] += w * x / n;
                }
            }
        }
        theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= learning_rate * gi);
    }
    theta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfTrOutcome {
    pub lambda: LambdaGrad,
    /// Mean soft set size on the evaluation examples.
    pub soft_set_size: f64,
    pub avg_set_size: f64,
    pub coverage: f64,
}

/// Calibrates on `cal` and evaluates set size and coverage on `eval`.
pub fn conftr_demo(
    theta: &[f64],
    cal: &[ClassExample],
    eval: &[ClassExample],
    alpha: f64,
    temperature: f64,
) -> Result<ConfTrOutcome> {
    let lambda = conftr_quantile_grad(&conftr_scores(theta, cal), alpha, ParamInterval::unit())?;
    let n = eval.len().max(1) as f64;
    let mut soft = 0.0;
    let mut size = 0.0;
    let mut covered = 0.0;
    for e in eval {
        soft += soft_set_size(theta, lambda.value, e, temperature).value;
        let (s, c) = prediction_set(theta, lambda.value, e);
        size += s as f64;
        covered += f64::from(u8::from(c));
    }
    Ok(ConfTrOutcome { lambda, soft_set_size: soft / n, avg_set_size: size / n, coverage: covered / n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::crc_bisect;
    use crate::grad::{central_difference, relative_gap, GradKind};
    use crate::loss::BoundFn;

    fn setup() -> (ConfTrConfig, ConfTrDataset, Vec<f64>) {
        let cfg = ConfTrConfig { n_train: 300, n_cal: 99, n_test: 400, ..Default::default() };
        let data = conftr_generate(&cfg).unwrap();
        let theta = conftr_pretrain(&data.train, &cfg, 200, 0.5);
        (cfg, data, theta)
    }

    #[test]
    fn quantile_matches_bisection() {
        let (_, data, theta) = setup();
        for alpha in [0.05, 0.1, 0.2] {
            let out = conftr_demo(&theta, &data.cal, &data.test, alpha, 0.1).unwrap();
            let losses = conftr_miscoverage_losses(&theta, &data.cal).unwrap();
            let r = crc_bisect(&losses, &BoundFn::Constant(1.0), ParamInterval::unit(), alpha, 1e-12).unwrap();
            assert!((out.lambda.value - r.lambda_hat).abs() <= 1e-12, "{} vs {}", out.lambda.value, r.lambda_hat);
            assert!(out.coverage > 1.0 - alpha - 0.06);
        }
    }

    #[test]
    fn tiny_alpha_gives_full_sets() {
        let (cfg, data, theta) = setup();
        let out = conftr_demo(&theta, &data.cal, &data.test, 0.001, 0.1).unwrap();
        assert_eq!(out.lambda.kind, GradKind::FallbackZero);
        assert_eq!(out.avg_set_size, cfg.n_classes as f64);
    }

    #[test]
    fn gradients_match_fd() {
        let (_, data, theta) = setup();
        let r = conftr_quantile_grad(&conftr_scores(&theta, &data.cal), 0.1, ParamInterval::unit()).unwrap();
        let fd = central_difference(
            |t| conftr_quantile_grad(&conftr_scores(t, &data.cal), 0.1, ParamInterval::unit()).unwrap().value,
            &theta,
            1e-6,
        );
        assert!(relative_gap(&r.grad, &fd) < 1e-5);
        let e = &data.test[0];
        let c = soft_set_size(&theta, 0.3, e, 0.1);
        let fd = central_difference(|t| soft_set_size(t, 0.3, e, 0.1).value, &theta, 1e-6);
        assert!(relative_gap(&c.d_theta, &fd) < 1e-6);
        let fd = central_difference(|l| soft_set_size(&theta, l[0], e, 0.1).value, &[0.3], 1e-6);
        assert!(relative_gap(&[c.d_lambda], &fd) < 1e-6);
    }
}
