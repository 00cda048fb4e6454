use corc::harness::*;
use corc::tasks::seg::{seg_generate, seg_pretrain, SegTaskConfig};
use corc::tasks::storage::{storage_generate, storage_pretrain, StorageTaskConfig};
use corc::tasks::conftr::{conftr_generate, conftr_pretrain, ConfTrConfig};

#[test]
fn uniform_step_losses_meet_the_mean_guarantee() {
    let req = ValidationRequest {
        n_cal: 100,
        trials: 10_000,
        seed: 5,
        ..ValidationRequest::new(ValidationTask::Synthetic, RiskKind::Expectation, 0.1)
    };
    let s = run_validation(&req).unwrap().summary;
    assert!(s.passed);
    assert!(s.mean_risk <= 0.1 + 3.0 * s.mean_risk_se, "{s:?}");
    assert_eq!(s.n_trials, 10_000);
}

#[test]
fn mixed_sign_linear_losses_meet_the_cvar_guarantee() {
    let req = ValidationRequest { n_cal: 400, seed: 9, ..ValidationRequest::new(ValidationTask::Storage, RiskKind::Cvar { delta: 0.9 }, 5.0) };
    let r = run_validation(&req).unwrap();
    assert!(r.summary.cvar_risk.unwrap() <= 5.0 * 1.05);
    assert_eq!(r.lambdas.len(), r.test_losses.len());
    assert_eq!(r.costs.len(), r.summary.n_trials);
}

#[test]
fn every_fixed_t_row_is_controlled() {
    let config = SweepConfig { values: vec![0.0, 1.25, 2.5, 3.75, 5.0], seeds: vec![0, 1], n_cal: 200, ..Default::default() };
    let report = sweep(SweepKind::T, &config).unwrap();
    assert_eq!(report.rows.len(), 5);
    for row in &report.rows {
        assert!(row.cvar_mean <= 5.0 * 1.05, "{row:?}");
    }
    assert!(report.passed());
}

#[test]
fn sweep_reports_are_byte_identical() {
    let config = SweepConfig { values: vec![0.9, 0.95], seeds: vec![3], n_cal: 100, ..Default::default() };
    let csv = |r: &SweepReport| {
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        buf
    };
    let a = sweep(SweepKind::Delta, &config).unwrap();
    let b = sweep(SweepKind::Delta, &config).unwrap();
    assert_eq!(csv(&a), csv(&b));
}

#[test]
fn seg_training_cost_falls_early() {
    let mut falling = 0;
    for seed in 0..10 {
        let cfg = SegTaskConfig { seed, ..Default::default() };
        let ds = seg_generate(&cfg).unwrap();
        let theta = seg_pretrain(&ds.train).unwrap();
        let task = SegTrainTask { dim: cfg.feature_dim, temperature: cfg.temperature, interval: cfg.interval };
        let tc = TrainConfig { epochs: 50, batch_size: 50, learning_rate: 0.05, grad_average: Some(10), seed, ..Default::default() };
        let out = train(&task, &TrainData::from_splits(ds.train, ds.cal, ds.test), &theta, &tc).unwrap();
        assert_eq!(out.epoch_costs.len(), 50);
        falling += usize::from(out.epoch_costs[9] < out.epoch_costs[0]);
    }
    assert!(falling >= 8, "training cost fell over the first 10 epochs for only {falling} seeds");
}

#[test]
fn final_calibration_split_is_untouched_by_training() {
    let cfg = SegTaskConfig { n_train: 60, n_cal: 40, n_test: 40, ..Default::default() };
    let ds = seg_generate(&cfg).unwrap();
    let data = TrainData::from_splits(ds.train, ds.cal, ds.test);
    data.check_hygiene().unwrap();
    assert!(data.cal.iter().all(|i| !data.train.contains(i)));
    let mut leaky = data.clone();
    leaky.train.push(leaky.cal[0]);
    assert!(leaky.check_hygiene().is_err());
}

#[test]
fn storage_tuned_t_ignores_calibration_order() {
    let scfg = StorageTaskConfig { n_train: 500, n_cal: 300, n_test: 300, ..Default::default() };
    let ds = storage_generate(&scfg).unwrap();
    let theta = storage_pretrain(&ds.train).unwrap();
    let task = StorageTrainTask { config: scfg.clone() };
    let tc = TrainConfig { epochs: 0, alpha: 5.0, t_policy: TPolicy::RetunePerEpoch, ..Default::default() };
    let data = TrainData::from_splits(ds.train, ds.cal, ds.test);
    let a = train(&task, &data, &theta, &tc).unwrap();
    let mut shuffled = data.clone();
    shuffled.cal.reverse();
    let b = train(&task, &shuffled, &theta, &tc).unwrap();
    assert_eq!(a.baseline.t, b.baseline.t);
    assert!(a.baseline.t.is_some());
}

#[test]
fn conftr_training_keeps_coverage() {
    let cfg = ConfTrConfig { n_train: 400, n_cal: 200, n_test: 600, ..Default::default() };
    let ds = conftr_generate(&cfg).unwrap();
    let theta = conftr_pretrain(&ds.train, &cfg, 100, 0.5);
    let task = ConfTrTrainTask { dim: cfg.param_dim(), temperature: cfg.temperature };
    let tc = TrainConfig { epochs: 10, batch_size: 100, learning_rate: 0.05, alpha: cfg.alpha, ..Default::default() };
    let out = train(&task, &TrainData::from_splits(ds.train, ds.cal, ds.test), &theta, &tc).unwrap();
    // One calibration draw: miscoverage fluctuates by about sqrt(a (1 - a) / n_cal) around its mean.
    let cal_spread = (cfg.alpha * (1.0 - cfg.alpha) / cfg.n_cal as f64).sqrt();
    assert!(out.trained.mean_risk <= cfg.alpha + 3.0 * (cal_spread + out.trained.risk_se), "{:?}", out.trained);
    assert!(out.trained.mean_cost >= 1.0);
}
