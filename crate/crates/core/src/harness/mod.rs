//! Conformal risk training, Monte Carlo guarantee validation, and sweep experiments.

pub mod stats;
pub mod sweep;
pub mod train;
pub mod validate;

pub use stats::{bootstrap_se, mean_and_se, sign_test_p, trial_rng, with_thread_pool};
pub use sweep::{sweep, SweepConfig, SweepKind, SweepReport, SweepRow};
pub use train::{
    train, train_step, ConfTrTrainTask, Evaluation, SegTrainTask, StepOutcome, StorageTrainTask, TPolicy,
    TrainConfig, TrainData, TrainOutcome, TrainTask,
};
pub use validate::{validate_storage, 
    run_validation, validate_guarantee, Calibrator, LossSampler, RiskKind, SegSampler, StorageSampler, TrialReport,
    TrialSummary, UniformStepSampler, ValidationConfig, ValidationRequest, ValidationTask,
};
