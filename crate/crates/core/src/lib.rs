//! Conformal risk control for optimized-certainty-equivalent risks, with exact
//! derivatives of the calibrated threshold for end-to-end training.

pub mod calibrate;
pub mod error;
pub mod grad;
pub mod harness;
pub mod loss;
pub mod risk;
pub mod search;
pub mod tasks;

pub use calibrate::{
    conformal_cvar_control, corc_bisect, crc_bisect, default_t_grid, joint_lambda_t, tune_t, CalibrationResult,
};
pub use error::{Error, Result};
pub use loss::{
    eval_loss, fnr_step_loss, format_losses, parse_losses, validate_bound, BoundFn, LinearLoss, Loss, ParamInterval,
    StepLoss,
};
pub use risk::{cvar_empirical, empirical_h, empirical_h_tilde, oce_risk_empirical, Disutility, RiskSpec};
