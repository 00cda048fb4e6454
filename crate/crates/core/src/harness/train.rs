//! Conformal risk training: each mini-batch is split into a calibration half that fixes
//! `lambda(theta)` and a prediction half whose cost is differentiated through it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::mean_and_se;
use crate::calibrate::{conformal_cvar_control, crc_bisect, default_t_grid, joint_lambda_t, tune_t};
use crate::error::{invalid, Error, Result};
use crate::grad::{
    averaged_threshold_grad, conftr_quantile_grad, full_cost_grad, lambda_grad_joint, lambda_grad_kkt,
    lambda_grad_piecewise, GradKind, LambdaGrad, LinearRiskProblem, Objective, Threshold, ThresholdLoss,
};
use crate::loss::{BoundFn, LinearLoss, Loss, ParamInterval};
use crate::risk::{cvar_empirical, Disutility, RiskSpec};
use crate::tasks::conftr::{conftr_scores, prediction_set, soft_set_size, ClassExample};
use crate::tasks::seg::{seg_fnr_losses, seg_rates, seg_soft_fpr_cost, seg_threshold_losses, SegImage};
use crate::tasks::storage::{StorageCost, StorageExample, StorageTaskConfig};
use crate::tasks::CostPartials;

/// How the cvar shift `t` is chosen while training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TPolicy {
    Fixed { t: f64 },
    /// Tuned on a slice of the training split at the start of every epoch.
    RetunePerEpoch,
    /// Solved jointly with `lambda` on every calibration half.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub cal_fraction: f64,
    pub learning_rate: f64,
    pub alpha: f64,
    pub delta: Option<f64>,
    pub t_policy: TPolicy,
    pub seed: u64,
    /// Average the threshold gradient over this many nearest thresholds (piecewise tasks).
    pub grad_average: Option<usize>,
    pub eps: f64,
    /// Training examples used when retuning `t`.
    pub t_holdout: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 100,
            cal_fraction: 0.5,
            learning_rate: 0.1,
            alpha: 0.1,
            delta: None,
            t_policy: TPolicy::Joint,
            seed: 0,
            grad_average: None,
            eps: 1e-9,
            t_holdout: 400,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cal_fraction > 0.0 && self.cal_fraction < 1.0) {
            return Err(invalid(format!("cal_fraction must lie in (0, 1), got {}", self.cal_fraction)));
        }
        // Zero is allowed so a run can reproduce the untrained baseline.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning_rate must be finite and nonnegative, got {}", self.learning_rate)));
        }
        if !self.alpha.is_finite() || !(self.eps > 0.0) {
            return Err(invalid("alpha must be finite and eps positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall { size: self.batch_size });
        }
        if let Some(d) = self.delta {
            Disutility::cvar(d)?;
        }
        if self.grad_average == Some(0) {
            return Err(invalid("grad_average must be at least 1"));
        }
        Ok(())
    }
}

/// Test-set performance at a calibrated threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub lambda: f64,
    pub t: Option<f64>,
    /// Mean realized cost: FPR, task loss or set size.
    pub mean_cost: f64,
    pub cost_se: f64,
    /// Mean controlled loss: FNR, financial risk or miscoverage.
    pub mean_risk: f64,
    pub risk_se: f64,
    pub cvar_risk: Option<f64>,
}

pub trait TrainTask: Sync {
    type Example: Clone + Send + Sync;

    fn dim(&self) -> usize;
    fn lambda_grad(&self, theta: &[f64], cal: &[Self::Example], t: Option<f64>, config: &TrainConfig) -> Result<LambdaGrad>;
    fn cost(&self, theta: &[f64], lambda: f64, example: &Self::Example) -> Result<CostPartials>;
    /// Post-hoc threshold without gradient.
    fn calibrate(&self, theta: &[f64], cal: &[Self::Example], t: Option<f64>, config: &TrainConfig) -> Result<f64>;
    /// `t` for fixed-`t` calibration, chosen from non-calibration data. `None` for tasks without a shift.
    fn tune_t(&self, _theta: &[f64], _holdout: &[Self::Example], _config: &TrainConfig) -> Result<Option<f64>> {
        Ok(None)
    }
    fn evaluate(&self, theta: &[f64], lambda: f64, test: &[Self::Example], config: &TrainConfig) -> Result<Evaluation>;
}

/// Examples plus disjoint index sets for training, final calibration and test.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData<E> {
    pub examples: Vec<E>,
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

impl<E: Clone> TrainData<E> {
    pub fn from_splits(train: Vec<E>, cal: Vec<E>, test: Vec<E>) -> Self {
        let (a, b, c) = (train.len(), cal.len(), test.len());
        let mut examples = train;
        examples.extend(cal);
        examples.extend(test);
        Self { examples, train: (0..a).collect(), cal: (a..a + b).collect(), test: (a + b..a + b + c).collect() }
    }

    pub fn check_hygiene(&self) -> Result<()> {
        let n = self.examples.len();
        let mut owner = vec![0u8; n];
        for (tag, set) in [(1u8, &self.train), (2, &self.cal), (3, &self.test)] {
            for &i in set {
                if i >= n {
                    return Err(invalid(format!("index {i} out of range for {n} examples")));
                }
                if owner[i] != 0 {
                    return Err(invalid(format!("example {i} appears in more than one split")));
                }
                owner[i] = tag;
            }
        }
        if self.train.is_empty() || self.cal.is_empty() || self.test.is_empty() {
            return Err(Error::EmptySamples);
        }
        Ok(())
    }

    fn gather(&self, idx: &[usize]) -> Vec<E> {
        idx.iter().map(|&i| self.examples[i].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub kind: Option<GradKind>,
    /// Mean cost over the prediction half before the update.
    pub mean_cost: f64,
    /// The threshold gradient was dropped because of a tie or kink.
    pub skipped: bool,
}

/// One update on a batch: random split, `lambda(theta)` from the calibration half, descent on
/// the mean prediction-half cost.
pub fn train_step<T: TrainTask>(
    task: &T,
    theta: &[f64],
    batch: &[T::Example],
    t: Option<f64>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    let n = batch.len();
    let n_cal = (n as f64 * config.cal_fraction).round() as usize;
    if n_cal == 0 || n_cal >= n {
        return Err(Error::BatchTooSmall { size: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let cal: Vec<T::Example> = order[..n_cal].iter().map(|&i| batch[i].clone()).collect();
    let pred = &order[n_cal..];

    let (lg, skipped) = match task.lambda_grad(theta, &cal, t, config) {
        Ok(lg) => (lg, false),
        Err(e) if e.is_degenerate() => {
            log::warn!("dropping threshold gradient for this step: {e}");
            let value = task.calibrate(theta, &cal, t, config)?;
            (LambdaGrad { value, grad: vec![0.0; task.dim()], kind: GradKind::FallbackZero }, true)
        }
        Err(e) => return Err(e),
    };
    let mut grad = vec![0.0; task.dim()];
    let mut cost = 0.0;
    let inv = 1.0 / pred.len() as f64;
    for &i in pred {
        let c = task.cost(theta, lg.value, &batch[i])?;
        cost += c.value * inv;
        for (g, v) in grad.iter_mut().zip(full_cost_grad(&lg, &c.d_theta, c.d_lambda)?) {
            *g += v * inv;
        }
    }
    let theta = theta.iter().zip(&grad).map(|(p, g)| p - config.learning_rate * g).collect();
    Ok(StepOutcome { theta, lambda: lg.value, kind: (!skipped).then_some(lg.kind), mean_cost: cost, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub initial_theta: Vec<f64>,
    pub theta: Vec<f64>,
    /// Initial model, calibrated post hoc.
    pub baseline: Evaluation,
    pub trained: Evaluation,
    /// Mean prediction-half cost per epoch.
    pub epoch_costs: Vec<f64>,
    pub steps: usize,
    pub skipped_steps: usize,
}

fn holdout_slice<E: Clone>(data: &TrainData<E>, config: &TrainConfig) -> Vec<E> {
    let k = config.t_holdout.min(data.train.len());
    data.gather(&data.train[..k])
}

fn final_t<T: TrainTask>(task: &T, theta: &[f64], data: &TrainData<T::Example>, config: &TrainConfig) -> Result<Option<f64>> {
    match config.t_policy {
        TPolicy::Fixed { t } => Ok(Some(t)),
        _ => task.tune_t(theta, &holdout_slice(data, config), config),
    }
}

fn posthoc<T: TrainTask>(task: &T, theta: &[f64], data: &TrainData<T::Example>, config: &TrainConfig) -> Result<Evaluation> {
    let t = final_t(task, theta, data, config)?;
    let lambda = task.calibrate(theta, &data.gather(&data.cal), t, config)?;
    let mut eval = task.evaluate(theta, lambda, &data.gather(&data.test), config)?;
    eval.t = t;
    Ok(eval)
}

/// Trains from `theta0`, then recalibrates on the calibration split, which training never sees.
pub fn train<T: TrainTask>(task: &T, data: &TrainData<T::Example>, theta0: &[f64], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    data.check_hygiene()?;
    if theta0.len() != task.dim() {
        return Err(Error::DimensionMismatch { expected: task.dim(), found: theta0.len() });
    }
    let baseline = posthoc(task, theta0, data, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = theta0.to_vec();
    let mut order = data.train.clone();
    let mut epoch_costs = Vec::with_capacity(config.epochs);
    let (mut steps, mut skipped_steps) = (0, 0);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let t = match config.t_policy {
            TPolicy::Fixed { t } => Some(t),
            TPolicy::RetunePerEpoch => task.tune_t(&theta, &holdout_slice(data, config), config)?,
            TPolicy::Joint => None,
        };
        let mut costs = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch = data.gather(chunk);
            let out = match train_step(task, &theta, &batch, t, config, &mut rng) {
                Err(Error::BatchTooSmall { .. }) if steps > 0 || chunk.len() < config.batch_size => continue,
                r => r?,
            };
            theta = out.theta;
            costs.push(out.mean_cost);
            steps += 1;
            skipped_steps += usize::from(out.skipped);
        }
        epoch_costs.push(costs.iter().sum::<f64>() / costs.len().max(1) as f64);
    }
    if skipped_steps > 0 {
        log::info!("{skipped_steps} of {steps} steps ran without the threshold gradient");
    }
    let trained = posthoc(task, &theta, data, config)?;
    Ok(TrainOutcome { initial_theta: theta0.to_vec(), theta, baseline, trained, epoch_costs, steps, skipped_steps })
}

/// Segmentation with FNR control and soft-FPR cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegTrainTask {
    pub dim: usize,
    pub temperature: f64,
    pub interval: ParamInterval,
}

impl TrainTask for SegTrainTask {
    type Example = SegImage;

    fn dim(&self) -> usize {
        self.dim
    }

    fn lambda_grad(&self, theta: &[f64], cal: &[SegImage], _t: Option<f64>, config: &TrainConfig) -> Result<LambdaGrad> {
        let losses = seg_threshold_losses(theta, cal)?;
        let spec = RiskSpec::expectation(config.alpha, self.interval)?;
        let mut lg = lambda_grad_piecewise(&losses, &BoundFn::Constant(1.0), &spec, self.dim)?;
        if let (Some(m), GradKind::ActiveJump { .. }) = (config.grad_average, lg.kind) {
            lg.grad = averaged_threshold_grad(&losses, lg.value, m, self.dim);
        }
        Ok(lg)
    }

    fn cost(&self, theta: &[f64], lambda: f64, example: &SegImage) -> Result<CostPartials> {
        seg_soft_fpr_cost(theta, lambda, example, self.temperature)
    }

    fn calibrate(&self, theta: &[f64], cal: &[SegImage], _t: Option<f64>, config: &TrainConfig) -> Result<f64> {
        let losses = seg_fnr_losses(theta, cal)?;
        Ok(crc_bisect(&losses, &BoundFn::Constant(1.0), self.interval, config.alpha, config.eps)?.lambda_hat)
    }

    fn evaluate(&self, theta: &[f64], lambda: f64, test: &[SegImage], _config: &TrainConfig) -> Result<Evaluation> {
        let (fnr, fpr): (Vec<f64>, Vec<f64>) = test.iter().map(|im| seg_rates(theta, lambda, im)).unzip();
        let (mean_cost, cost_se) = mean_and_se(&fpr);
        let (mean_risk, risk_se) = mean_and_se(&fnr);
        Ok(Evaluation { lambda, t: None, mean_cost, cost_se, mean_risk, risk_se, cvar_risk: None })
    }
}

/// Storage arbitrage with cvar control of the linear financial risk.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageTrainTask {
    pub config: StorageTaskConfig,
}

impl StorageTrainTask {
    fn delta(&self, config: &TrainConfig) -> f64 {
        config.delta.unwrap_or(self.config.delta)
    }

    fn bound(&self) -> Result<BoundFn> {
        BoundFn::linear(self.config.bound_slope)
    }

    fn losses(&self, theta: &[f64], examples: &[StorageExample]) -> Result<Vec<Loss>> {
        examples
            .iter()
            .map(|e| LinearLoss::new(StorageCost::new(theta, e, &self.config).slope()).map(Loss::Linear))
            .collect()
    }
}

impl TrainTask for StorageTrainTask {
    type Example = StorageExample;

    fn dim(&self) -> usize {
        self.config.feature_dim
    }

    fn lambda_grad(&self, theta: &[f64], cal: &[StorageExample], t: Option<f64>, config: &TrainConfig) -> Result<LambdaGrad> {
        let costs: Vec<StorageCost> = cal.iter().map(|e| StorageCost::new(theta, e, &self.config)).collect();
        let slopes: Vec<f64> = costs.iter().map(StorageCost::slope).collect();
        let slope_grads: Vec<Vec<f64>> = costs.iter().map(StorageCost::slope_grad).collect();
        let (b, interval, delta) = (self.config.bound_slope, self.config.interval(), self.delta(config));
        match t {
            None => Ok(lambda_grad_joint(&slopes, &slope_grads, b, interval, config.alpha, delta, config.eps)?.1),
            Some(t) => {
                if !(b * interval.lo() <= t && t <= config.alpha) {
                    return Ok(LambdaGrad { value: interval.lo(), grad: vec![0.0; self.dim()], kind: GradKind::FallbackZero });
                }
                let problem = LinearRiskProblem {
                    slopes: &slopes,
                    slope_grads: &slope_grads,
                    bound_slope: b,
                    disutility: Disutility::cvar(delta)?,
                    t,
                    alpha: config.alpha,
                    interval,
                };
                lambda_grad_kkt(&problem, Objective::StrictlyDecreasing)
            }
        }
    }

    fn cost(&self, theta: &[f64], lambda: f64, example: &StorageExample) -> Result<CostPartials> {
        let c = StorageCost::new(theta, example, &self.config);
        Ok(CostPartials { value: c.value(lambda), d_theta: c.d_theta(lambda), d_lambda: c.d_lambda(lambda) })
    }

    fn calibrate(&self, theta: &[f64], cal: &[StorageExample], t: Option<f64>, config: &TrainConfig) -> Result<f64> {
        let (bound, interval, delta) = (self.bound()?, self.config.interval(), self.delta(config));
        let r = match t {
            Some(t) => conformal_cvar_control(&self.losses(theta, cal)?, &bound, interval, config.alpha, delta, t, config.eps)?,
            None => {
                let linear: Vec<LinearLoss> =
                    cal.iter().map(|e| LinearLoss::new(StorageCost::new(theta, e, &self.config).slope())).collect::<Result<_>>()?;
                joint_lambda_t(&linear, &bound, interval, config.alpha, delta, config.eps)?
            }
        };
        Ok(r.lambda_hat)
    }

    fn tune_t(&self, theta: &[f64], holdout: &[StorageExample], config: &TrainConfig) -> Result<Option<f64>> {
        let (bound, interval) = (self.bound()?, self.config.interval());
        let grid = default_t_grid(&bound, interval, config.alpha);
        tune_t(&self.losses(theta, holdout)?, &bound, interval, config.alpha, self.delta(config), &grid, config.eps).map(Some)
    }

    fn evaluate(&self, theta: &[f64], lambda: f64, test: &[StorageExample], config: &TrainConfig) -> Result<Evaluation> {
        let costs: Vec<StorageCost> = test.iter().map(|e| StorageCost::new(theta, e, &self.config)).collect();
        let task: Vec<f64> = costs.iter().map(|c| c.value(lambda)).collect();
        let risk: Vec<f64> = costs.iter().map(|c| c.slope() * lambda).collect();
        let (mean_cost, cost_se) = mean_and_se(&task);
        let (mean_risk, risk_se) = mean_and_se(&risk);
        let cvar = cvar_empirical(&risk, self.delta(config))?;
        Ok(Evaluation { lambda, t: None, mean_cost, cost_se, mean_risk, risk_se, cvar_risk: Some(cvar) })
    }
}

/// Conformal training of a softmax classifier: quantile threshold, soft set-size cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfTrTrainTask {
    pub dim: usize,
    pub temperature: f64,
}

impl TrainTask for ConfTrTrainTask {
    type Example = ClassExample;

    fn dim(&self) -> usize {
        self.dim
    }

    fn lambda_grad(&self, theta: &[f64], cal: &[ClassExample], _t: Option<f64>, config: &TrainConfig) -> Result<LambdaGrad> {
        let scores = conftr_scores(theta, cal);
        let mut lg = conftr_quantile_grad(&scores, config.alpha, ParamInterval::unit())?;
        if let (Some(m), GradKind::ActiveJump { .. }) = (config.grad_average, lg.kind) {
            // Thresholds sit at 1 - s_i and move with -ds_i/dtheta.
            let thresholds: Vec<ThresholdLoss> = scores
                .into_iter()
                .map(|(s, g)| ThresholdLoss {
                    base: 0.0,
                    thresholds: vec![Threshold { location: 1.0 - s, grad: g.iter().map(|v| -v).collect(), size: 1.0 }],
                })
                .collect();
            lg.grad = averaged_threshold_grad(&thresholds, lg.value, m, self.dim);
        }
        Ok(lg)
    }

    fn cost(&self, theta: &[f64], lambda: f64, example: &ClassExample) -> Result<CostPartials> {
        Ok(soft_set_size(theta, lambda, example, self.temperature))
    }

    fn calibrate(&self, theta: &[f64], cal: &[ClassExample], t: Option<f64>, config: &TrainConfig) -> Result<f64> {
        self.lambda_grad(theta, cal, t, config).map(|lg| lg.value)
    }

    fn evaluate(&self, theta: &[f64], lambda: f64, test: &[ClassExample], _config: &TrainConfig) -> Result<Evaluation> {
        let (sizes, missed): (Vec<f64>, Vec<f64>) = test
            .iter()
            .map(|e| {
                let (s, c) = prediction_set(theta, lambda, e);
                (s as f64, if c { 0.0 } else { 1.0 })
            })
            .unzip();
        let (mean_cost, cost_se) = mean_and_se(&sizes);
        let (mean_risk, risk_se) = mean_and_se(&missed);
        Ok(Evaluation { lambda, t: None, mean_cost, cost_se, mean_risk, risk_se, cvar_risk: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::seg::{seg_generate, seg_pretrain, SegTaskConfig};
    use crate::tasks::storage::{storage_generate, storage_pretrain};

    fn seg_setup(seed: u64) -> (SegTrainTask, TrainData<SegImage>, Vec<f64>) {
        let cfg = SegTaskConfig { seed, n_train: 100, n_cal: 60, n_test: 100, ..Default::default() };
        let data = seg_generate(&cfg).unwrap();
        let theta = seg_pretrain(&data.train).unwrap();
        let task = SegTrainTask { dim: cfg.feature_dim, temperature: cfg.temperature, interval: cfg.interval };
        (task, TrainData::from_splits(data.train, data.cal, data.test), theta)
    }

    #[test]
    fn zero_epochs_is_the_baseline() {
        let (task, data, theta) = seg_setup(1);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let out = train(&task, &data, &theta, &cfg).unwrap();
        assert_eq!(out.theta, theta);
        assert_eq!(out.baseline, out.trained);
    }

    #[test]
    fn zero_learning_rate_keeps_theta() {
        let (task, data, theta) = seg_setup(2);
        let batch = data.gather(&data.train[..20]);
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        let out = train_step(&task, &theta, &batch, None, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.theta, theta);
    }

    #[test]
    fn flat_lambda_cost_is_plain_descent() {
        struct Quadratic;
        impl TrainTask for Quadratic {
            type Example = f64;
            fn dim(&self) -> usize {
                1
            }
            fn lambda_grad(&self, _: &[f64], _: &[f64], _: Option<f64>, _: &TrainConfig) -> Result<LambdaGrad> {
                Ok(LambdaGrad { value: 0.3, grad: vec![5.0], kind: GradKind::ActiveJump { index: 0 } })
            }
            fn cost(&self, theta: &[f64], _: f64, y: &f64) -> Result<CostPartials> {
                Ok(CostPartials { value: (theta[0] - y).powi(2), d_theta: vec![2.0 * (theta[0] - y)], d_lambda: 0.0 })
            }
            fn calibrate(&self, _: &[f64], _: &[f64], _: Option<f64>, _: &TrainConfig) -> Result<f64> {
                Ok(0.3)
            }
            fn evaluate(&self, _: &[f64], lambda: f64, _: &[f64], _: &TrainConfig) -> Result<Evaluation> {
                Ok(Evaluation { lambda, t: None, mean_cost: 0.0, cost_se: 0.0, mean_risk: 0.0, risk_se: 0.0, cvar_risk: None })
            }
        }
        let batch = [1.0, 1.0, 1.0, 1.0];
        let cfg = TrainConfig { learning_rate: 0.25, ..Default::default() };
        let out = train_step(&Quadratic, &[3.0], &batch, None, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.theta, vec![3.0 - 0.25 * 4.0]);
        let err = train_step(&Quadratic, &[3.0], &batch[..1], None, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::BatchTooSmall { size: 1 })));
    }

    #[test]
    fn hygiene_and_config_checks() {
        let (_, mut data, _) = seg_setup(3);
        assert!(data.check_hygiene().is_ok());
        data.cal.push(data.train[0]);
        assert!(data.check_hygiene().is_err());
        assert!(TrainConfig { cal_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn deterministic_training() {
        let (task, data, theta) = seg_setup(4);
        let cfg = TrainConfig { epochs: 3, batch_size: 20, learning_rate: 0.05, ..Default::default() };
        let a = train(&task, &data, &theta, &cfg).unwrap();
        let b = train(&task, &data, &theta, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epoch_costs.len(), 3);
    }

    #[test]
    fn storage_policies_run_and_tuned_t_ignores_cal() {
        let scfg = StorageTaskConfig { n_train: 400, n_cal: 200, n_test: 400, ..Default::default() };
        let ds = storage_generate(&scfg).unwrap();
        let theta = storage_pretrain(&ds.train).unwrap();
        let task = StorageTrainTask { config: scfg.clone() };
        let mut data = TrainData::from_splits(ds.train, ds.cal, ds.test);
        for policy in [TPolicy::Joint, TPolicy::RetunePerEpoch, TPolicy::Fixed { t: 2.0 }] {
            let cfg = TrainConfig { epochs: 2, batch_size: 100, alpha: 5.0, learning_rate: 0.01, t_policy: policy, ..Default::default() };
            let out = train(&task, &data, &theta, &cfg).unwrap();
            assert!(out.trained.lambda >= 0.0 && out.trained.lambda <= 1.0);
        }
        let cfg = TrainConfig { alpha: 5.0, t_policy: TPolicy::RetunePerEpoch, ..Default::default() };
        let t1 = final_t(&task, &theta, &data, &cfg).unwrap();
        data.cal.reverse();
        assert_eq!(final_t(&task, &theta, &data, &cfg).unwrap(), t1);
    }
}
