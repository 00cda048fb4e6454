use std::error::Error as StdError;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use corc::calibrate::{conformal_cvar_control, corc_bisect, crc_bisect, default_t_grid, joint_lambda_t, tune_t};
use corc::harness::{self, with_thread_pool, RiskKind, SweepConfig, SweepKind, TrainConfig, TrainData, TrainOutcome, TrainTask};
use corc::tasks::conftr::{conftr_generate, conftr_pretrain, ConfTrConfig};
use corc::tasks::seg::{seg_generate, seg_pretrain, SegTaskConfig};
use corc::tasks::storage::{storage_generate, storage_pretrain, StorageTaskConfig};
use corc::tasks::{write_seg_csv, write_storage_csv};
use corc::{parse_losses, BoundFn, CalibrationResult, Disutility, Loss, ParamInterval, RiskSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{
    CalibrateArgs, GenerateArgs, GenerateTaskArg, RiskArg, SweepArgs, SweepKindArg, TrainArgs, TrainTaskArg,
    ValidateArgs, ValidateTaskArg,
};

type CliResult<T> = Result<T, Box<dyn StdError + Send + Sync>>;

fn read_losses(path: &Path) -> CliResult<Vec<Loss>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(parse_losses(&text)?)
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = BufWriter::new(File::create(path).map_err(|e| format!("{}: {e}", path.display()))?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| format!("{}: {e}", path.display()))?))
}

#[derive(Serialize)]
struct CalibrateOutput {
    method: &'static str,
    #[serde(flatten)]
    result: CalibrationResult,
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<bool> {
    let losses = read_losses(&a.losses)?;
    let bound: BoundFn = a.bound.parse()?;
    let interval = ParamInterval::new(a.lambda_min, a.lambda_max)?;
    let (method, result) = match (a.delta, a.entropic) {
        (None, true) => {
            let t = a.t.ok_or("--entropic needs --t")?;
            let spec = RiskSpec::new(a.alpha, t, Disutility::Entropic, interval)?;
            ("entropic", corc_bisect(&losses, &bound, &spec, a.eps)?)
        }
        (None, false) => {
            if a.t.is_some() || a.tune_t.is_some() || a.joint {
                return Err("--t, --tune-t and --joint need --delta or --entropic".into());
            }
            ("mean", crc_bisect(&losses, &bound, interval, a.alpha, a.eps)?)
        }
        (Some(delta), _) => {
            if a.joint {
                let linear = losses
                    .iter()
                    .map(|l| match l {
                        Loss::Linear(l) => Ok(*l),
                        Loss::Step(_) => Err("--joint needs linear losses"),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                ("cvar_joint", joint_lambda_t(&linear, &bound, interval, a.alpha, delta, a.eps)?)
            } else {
                let t = match (&a.tune_t, a.t) {
                    (Some(path), _) => {
                        let holdout = read_losses(path)?;
                        let grid = default_t_grid(&bound, interval, a.alpha);
                        tune_t(&holdout, &bound, interval, a.alpha, delta, &grid, a.eps)?
                    }
                    (None, Some(t)) => t,
                    (None, None) => return Err("cvar calibration needs --t, --tune-t or --joint".into()),
                };
                ("cvar", conformal_cvar_control(&losses, &bound, interval, a.alpha, delta, t, a.eps)?)
            }
        }
    };
    println!("{}", serde_json::to_string_pretty(&CalibrateOutput { method, result })?);
    Ok(true)
}

pub fn validate(a: &ValidateArgs) -> CliResult<bool> {
    let task = match a.task {
        ValidateTaskArg::Seg => harness::ValidationTask::Seg,
        ValidateTaskArg::Storage => harness::ValidationTask::Storage,
        ValidateTaskArg::Synthetic => harness::ValidationTask::Synthetic,
    };
    let risk = match (a.risk, a.delta) {
        (RiskArg::Mean, _) => RiskKind::Expectation,
        (RiskArg::Cvar, Some(delta)) => RiskKind::Cvar { delta },
        (RiskArg::Cvar, None) => return Err("--risk cvar needs --delta".into()),
    };
    let req = harness::ValidationRequest {
        trials: a.trials,
        n_cal: a.n_cal,
        seed: a.seed,
        t: a.t,
        holdout: a.holdout,
        ..harness::ValidationRequest::new(task, risk, a.alpha)
    };
    let report = with_thread_pool(|| harness::run_validation(&req))??;
    report.write_csv(create(&a.out)?)?;
    write_json(&a.out.with_extension("json"), &report.summary)?;
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(report.summary.passed)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PretrainSettings {
    epochs: usize,
    learning_rate: f64,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 0.5 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    train: toml::Table,
    seg: SegTaskConfig,
    storage: StorageTaskConfig,
    conftr: ConfTrConfig,
    pretrain: PretrainSettings,
}

impl TrainFile {
    /// The `[train]` table, taking `alpha` from the task table when it is not given.
    fn train_config(&self, task_alpha: f64) -> CliResult<TrainConfig> {
        let mut table = self.train.clone();
        table.entry("alpha").or_insert(toml::Value::Float(task_alpha));
        Ok(toml::Value::Table(table).try_into()?)
    }
}

fn run_training<T: TrainTask>(task: &T, data: &TrainData<T::Example>, theta0: &[f64], config: &TrainConfig, out: &Path) -> CliResult<bool> {
    let outcome: TrainOutcome = with_thread_pool(|| harness::train(task, data, theta0, config))??;
    fs::create_dir_all(out)?;
    write_json(&out.join("outcome.json"), &outcome)?;
    let mut w = csv::Writer::from_writer(create(&out.join("epochs.csv"))?);
    w.write_record(["epoch", "mean_cost"])?;
    for (i, c) in outcome.epoch_costs.iter().enumerate() {
        w.write_record([(i + 1).to_string(), c.to_string()])?;
    }
    w.flush()?;
    let summary = serde_json::json!({
        "baseline": outcome.baseline,
        "trained": outcome.trained,
        "steps": outcome.steps,
        "skipped_steps": outcome.skipped_steps,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(true)
}

pub fn train(a: &TrainArgs) -> CliResult<bool> {
    let file: TrainFile = load_toml(a.config.as_deref())?;
    match a.task {
        TrainTaskArg::Seg => {
            let cfg = &file.seg;
            let ds = seg_generate(cfg)?;
            let theta = seg_pretrain(&ds.train)?;
            let task = harness::SegTrainTask { dim: cfg.feature_dim, temperature: cfg.temperature, interval: cfg.interval };
            let data = TrainData::from_splits(ds.train, ds.cal, ds.test);
            run_training(&task, &data, &theta, &file.train_config(cfg.alpha)?, &a.out)
        }
        TrainTaskArg::Storage => {
            let cfg = &file.storage;
            let ds = storage_generate(cfg)?;
            let theta = storage_pretrain(&ds.train)?;
            let task = harness::StorageTrainTask { config: cfg.clone() };
            let data = TrainData::from_splits(ds.train, ds.cal, ds.test);
            run_training(&task, &data, &theta, &file.train_config(cfg.alpha)?, &a.out)
        }
        TrainTaskArg::Conftr => {
            let cfg = &file.conftr;
            cfg.validate()?;
            let ds = conftr_generate(cfg)?;
            let theta = conftr_pretrain(&ds.train, cfg, file.pretrain.epochs, file.pretrain.learning_rate);
            let task = harness::ConfTrTrainTask { dim: cfg.param_dim(), temperature: cfg.temperature };
            let data = TrainData::from_splits(ds.train, ds.cal, ds.test);
            run_training(&task, &data, &theta, &file.train_config(cfg.alpha)?, &a.out)
        }
    }
}

pub fn sweep(a: &SweepArgs) -> CliResult<bool> {
    let config: SweepConfig = load_toml(Some(&a.config))?;
    let kind = match a.kind {
        SweepKindArg::T => SweepKind::T,
        SweepKindArg::N => SweepKind::N,
        SweepKindArg::Alpha => SweepKind::Alpha,
        SweepKindArg::Delta => SweepKind::Delta,
    };
    let report = with_thread_pool(|| harness::sweep(kind, &config))??;
    report.write_csv(create(&a.out)?)?;
    write_json(&a.out.with_extension("json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.passed())
}

pub fn generate(a: &GenerateArgs) -> CliResult<bool> {
    fs::create_dir_all(&a.out)?;
    match a.task {
        GenerateTaskArg::Seg => {
            let mut cfg: SegTaskConfig = load_toml(a.config.as_deref())?;
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let ds = seg_generate(&cfg)?;
            for (name, split) in [("train", &ds.train), ("cal", &ds.cal), ("test", &ds.test)] {
                write_seg_csv(split, create(&a.out.join(format!("{name}.csv")))?)?;
            }
        }
        GenerateTaskArg::Storage => {
            let mut cfg: StorageTaskConfig = load_toml(a.config.as_deref())?;
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let ds = storage_generate(&cfg)?;
            for (name, split) in [("train", &ds.train), ("cal", &ds.cal), ("test", &ds.test)] {
                write_storage_csv(split, create(&a.out.join(format!("{name}.csv")))?)?;
            }
        }
    }
    Ok(true)
}
