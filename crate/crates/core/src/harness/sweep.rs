//! Grid experiments on the storage task: each grid point runs a full validation per seed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::stats::{mean_and_se, std_dev};
use super::validate::{validate_storage, RiskKind, ValidationRequest, ValidationTask, MIN_TRIALS};
use crate::error::{invalid, Result};
use crate::tasks::storage::StorageTaskConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Fixed cvar shift `t`.
    T,
    /// Calibration set size.
    N,
    Alpha,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub storage: StorageTaskConfig,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub trials: usize,
    pub n_cal: usize,
    pub alpha: f64,
    pub delta: f64,
    /// Fixed shift for every grid point; tuned on a holdout when absent.
    pub t: Option<f64>,
    pub holdout: usize,
    pub eps: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            storage: StorageTaskConfig::default(),
            values: Vec::new(),
            seeds: (0..5).collect(),
            trials: MIN_TRIALS,
            n_cal: 400,
            alpha: 5.0,
            delta: 0.9,
            t: None,
            holdout: 400,
            eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub lambda_mean: f64,
    pub lambda_std: f64,
    /// Standard error of the mean `lambda_hat` pooled over every trial of every seed.
    pub lambda_se: f64,
    pub cvar_mean: f64,
    pub cvar_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub alpha: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
    /// For calibration-size sweeps: mean `lambda_hat` never drops by more than one pooled
    /// standard error between consecutive grid points.
    pub monotone_ok: Option<bool>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed) && self.monotone_ok != Some(false)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn request(config: &SweepConfig, kind: SweepKind, value: f64, seed: u64) -> Result<ValidationRequest> {
    let mut req = ValidationRequest {
        trials: config.trials,
        n_cal: config.n_cal,
        seed,
        t: config.t,
        holdout: config.holdout,
        eps: config.eps,
        ..ValidationRequest::new(ValidationTask::Storage, RiskKind::Cvar { delta: config.delta }, config.alpha)
    };
    match kind {
        SweepKind::T => req.t = Some(value),
        SweepKind::N => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(invalid(format!("calibration size must be a positive integer, got {value}")));
            }
            req.n_cal = value as usize;
        }
        SweepKind::Alpha => req.alpha = value,
        SweepKind::Delta => req.risk = RiskKind::Cvar { delta: value },
    }
    Ok(req)
}

pub fn sweep(kind: SweepKind, config: &SweepConfig) -> Result<SweepReport> {
    if config.values.is_empty() || config.seeds.is_empty() {
        return Err(invalid("sweep needs at least one grid value and one seed"));
    }
    let mut rows = Vec::with_capacity(config.values.len());
    for &value in &config.values {
        let mut lambdas = Vec::new();
        let mut pooled = Vec::new();
        let mut cvars = Vec::new();
        let mut costs = Vec::new();
        let mut passed = true;
        let mut alpha = config.alpha;
        for &seed in &config.seeds {
            let req = request(config, kind, value, seed)?;
            alpha = req.alpha;
            let report = validate_storage(&config.storage, &req)?;
            let s = &report.summary;
            lambdas.push(s.mean_lambda);
            cvars.push(s.cvar_risk.unwrap_or(f64::NAN));
            costs.push(s.mean_cost);
            passed &= s.passed;
            pooled.extend(report.lambdas);
        }
        rows.push(SweepRow {
            value,
            lambda_mean: mean_and_se(&lambdas).0,
            lambda_std: std_dev(&lambdas),
            lambda_se: mean_and_se(&pooled).1,
            cvar_mean: mean_and_se(&cvars).0,
            cvar_std: std_dev(&cvars),
            cost_mean: mean_and_se(&costs).0,
            cost_std: std_dev(&costs),
            alpha,
            passed,
        });
    }
    let monotone_ok = (kind == SweepKind::N).then(|| {
        rows.windows(2).all(|w| {
            let se = w[0].lambda_se.hypot(w[1].lambda_se);
            w[1].lambda_mean >= w[0].lambda_mean - se
        })
    });
    Ok(SweepReport { kind, rows, monotone_ok })
}
