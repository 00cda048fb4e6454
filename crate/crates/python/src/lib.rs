//! Python bindings. Build with `maturin develop` from this directory; the module is `corc`.

use corc::grad::{conftr_quantile_grad, lambda_grad_joint, lambda_grad_kkt, GradKind, LambdaGrad, LinearRiskProblem, Objective};
use corc::harness::{self, RiskKind, ValidationRequest, ValidationTask};
use corc::{BoundFn, Disutility, LinearLoss, ParamInterval, RiskSpec, StepLoss};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(corc, CorcError, PyValueError);

fn py_err(e: corc::Error) -> PyErr {
    CorcError::new_err(e.to_string())
}

fn bound(text: &str) -> PyResult<BoundFn> {
    text.parse().map_err(py_err)
}

fn interval(lo: f64, hi: f64) -> PyResult<ParamInterval> {
    ParamInterval::new(lo, hi).map_err(py_err)
}

fn disutility(name: &str, delta: Option<f64>) -> PyResult<Disutility> {
    match (name, delta) {
        ("identity", None) => Ok(Disutility::Identity),
        ("entropic", None) => Ok(Disutility::Entropic),
        ("cvar", Some(d)) => Disutility::cvar(d).map_err(py_err),
        ("cvar", None) => Err(CorcError::new_err("cvar needs delta")),
        (other, _) => Err(CorcError::new_err(format!("unknown disutility {other:?}, or delta given without cvar"))),
    }
}

fn core_losses(losses: &[Loss]) -> Vec<corc::Loss> {
    losses.iter().map(|l| l.0.clone()).collect()
}

/// A loss as a function of `lambda`: a nondecreasing step function or `slope * lambda`.
#[pyclass(module = "corc", frozen, from_py_object)]
#[derive(Clone)]
pub struct Loss(corc::Loss);

#[pymethods]
impl Loss {
    /// `base + sum of sizes over locations <= lambda`.
    #[staticmethod]
    fn step(base: f64, jumps: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(Self(StepLoss::new(base, jumps).map_err(py_err)?.into()))
    }

    #[staticmethod]
    fn linear(slope: f64) -> PyResult<Self> {
        Ok(Self(LinearLoss::new(slope).map_err(py_err)?.into()))
    }

    /// One loss in the text format, e.g. `step 0 0.3:1` or `linear -0.5`.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self(text.parse().map_err(py_err)?))
    }

    fn __call__(&self, lambda: f64) -> f64 {
        self.0.eval(lambda)
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Loss.parse({:?})", self.0.to_string())
    }
}

#[pyclass(module = "corc", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct CalibrationResult {
    lambda_hat: f64,
    t_used: f64,
    h_tilde_at_lambda: f64,
    feasible: bool,
    iterations: usize,
}

#[pymethods]
impl CalibrationResult {
    fn __repr__(&self) -> String {
        format!(
            "CalibrationResult(lambda_hat={}, t_used={}, h_tilde_at_lambda={}, feasible={}, iterations={})",
            self.lambda_hat,
            self.t_used,
            self.h_tilde_at_lambda,
            if self.feasible { "True" } else { "False" },
            self.iterations
        )
    }
}

impl From<corc::CalibrationResult> for CalibrationResult {
    fn from(r: corc::CalibrationResult) -> Self {
        Self { lambda_hat: r.lambda_hat, t_used: r.t_used, h_tilde_at_lambda: r.h_tilde_at_lambda, feasible: r.feasible, iterations: r.iterations }
    }
}

/// `(value, gradient, kind)` with kind one of `interior_max`, `active_jump`, `kkt`, `fallback_zero`.
type GradTuple = (f64, Vec<f64>, &'static str);

fn grad_tuple(g: LambdaGrad) -> GradTuple {
    let kind = match g.kind {
        GradKind::InteriorMax => "interior_max",
        GradKind::ActiveJump { .. } => "active_jump",
        GradKind::Kkt { .. } => "kkt",
        GradKind::FallbackZero => "fallback_zero",
    };
    (g.value, g.grad, kind)
}

#[pyfunction]
fn parse_losses(text: &str) -> PyResult<Vec<Loss>> {
    Ok(corc::parse_losses(text).map_err(py_err)?.into_iter().map(Loss).collect())
}

/// Largest `lambda` with `(B(lambda) + sum L_i(lambda)) / (N + 1) <= alpha`.
#[pyfunction]
#[pyo3(signature = (losses, alpha, bound = "const 1", lambda_min = 0.0, lambda_max = 1.0, eps = 1e-9))]
fn crc_bisect(losses: Vec<Loss>, alpha: f64, bound: &str, lambda_min: f64, lambda_max: f64, eps: f64) -> PyResult<CalibrationResult> {
    let b = self::bound(bound)?;
    Ok(corc::crc_bisect(&core_losses(&losses), &b, interval(lambda_min, lambda_max)?, alpha, eps).map_err(py_err)?.into())
}

/// Calibration for the shifted risk with disutility `identity`, `entropic` or `cvar` (needs `delta`).
#[pyfunction]
#[pyo3(signature = (losses, alpha, t, disutility = "cvar", delta = None, bound = "const 1", lambda_min = 0.0, lambda_max = 1.0, eps = 1e-9))]
#[allow(clippy::too_many_arguments)]
fn corc_bisect(
    losses: Vec<Loss>,
    alpha: f64,
    t: f64,
    disutility: &str,
    delta: Option<f64>,
    bound: &str,
    lambda_min: f64,
    lambda_max: f64,
    eps: f64,
) -> PyResult<CalibrationResult> {
    let phi = self::disutility(disutility, delta)?;
    let spec = RiskSpec::new(alpha, t, phi, interval(lambda_min, lambda_max)?).map_err(py_err)?;
    Ok(corc::corc_bisect(&core_losses(&losses), &self::bound(bound)?, &spec, eps).map_err(py_err)?.into())
}

/// Cvar calibration for losses monotone in either direction.
#[pyfunction]
#[pyo3(signature = (losses, alpha, delta, t, bound = "const 1", lambda_min = 0.0, lambda_max = 1.0, eps = 1e-9))]
#[allow(clippy::too_many_arguments)]
fn conformal_cvar_control(
    losses: Vec<Loss>,
    alpha: f64,
    delta: f64,
    t: f64,
    bound: &str,
    lambda_min: f64,
    lambda_max: f64,
    eps: f64,
) -> PyResult<CalibrationResult> {
    let b = self::bound(bound)?;
    let iv = interval(lambda_min, lambda_max)?;
    Ok(corc::conformal_cvar_control(&core_losses(&losses), &b, iv, alpha, delta, t, eps).map_err(py_err)?.into())
}

/// Grid `t` maximizing the calibrated `lambda` on `holdout`; the default grid spans the valid window.
#[pyfunction]
#[pyo3(signature = (holdout, alpha, delta, t_grid = None, bound = "const 1", lambda_min = 0.0, lambda_max = 1.0, eps = 1e-9))]
#[allow(clippy::too_many_arguments)]
fn tune_t(
    holdout: Vec<Loss>,
    alpha: f64,
    delta: f64,
    t_grid: Option<Vec<f64>>,
    bound: &str,
    lambda_min: f64,
    lambda_max: f64,
    eps: f64,
) -> PyResult<f64> {
    let b = self::bound(bound)?;
    let iv = interval(lambda_min, lambda_max)?;
    let grid = t_grid.unwrap_or_else(|| corc::default_t_grid(&b, iv, alpha));
    corc::tune_t(&core_losses(&holdout), &b, iv, alpha, delta, &grid, eps).map_err(py_err)
}

/// Joint `(lambda, t)` cvar calibration for linear losses `slope * lambda` and bound `bound_slope * lambda`.
#[pyfunction]
#[pyo3(signature = (slopes, bound_slope, alpha, delta, lambda_min = 0.0, lambda_max = 1.0, eps = 1e-9))]
fn joint_lambda_t(
    slopes: Vec<f64>,
    bound_slope: f64,
    alpha: f64,
    delta: f64,
    lambda_min: f64,
    lambda_max: f64,
    eps: f64,
) -> PyResult<CalibrationResult> {
    let losses = slopes.into_iter().map(LinearLoss::new).collect::<corc::Result<Vec<_>>>().map_err(py_err)?;
    let b = BoundFn::linear(bound_slope).map_err(py_err)?;
    Ok(corc::joint_lambda_t(&losses, &b, interval(lambda_min, lambda_max)?, alpha, delta, eps).map_err(py_err)?.into())
}

#[pyfunction]
#[pyo3(signature = (losses, lambda_, t, disutility = "identity", delta = None, bound = "const 1"))]
fn empirical_h_tilde(losses: Vec<Loss>, lambda_: f64, t: f64, disutility: &str, delta: Option<f64>, bound: &str) -> PyResult<f64> {
    let phi = self::disutility(disutility, delta)?;
    corc::empirical_h_tilde(&core_losses(&losses), &self::bound(bound)?, lambda_, t, &phi).map_err(py_err)
}

#[pyfunction]
fn cvar_empirical(samples: Vec<f64>, delta: f64) -> PyResult<f64> {
    corc::cvar_empirical(&samples, delta).map_err(py_err)
}

/// `d lambda / d theta` at fixed cvar shift `t` for linear losses, with slopes `a_i(theta)`
/// and their gradients. The downstream objective is taken as decreasing in `lambda`.
#[pyfunction]
#[pyo3(signature = (slopes, slope_grads, bound_slope, alpha, delta, t, lambda_min = 0.0, lambda_max = 1.0))]
#[allow(clippy::too_many_arguments)]
fn lambda_grad_linear(
    slopes: Vec<f64>,
    slope_grads: Vec<Vec<f64>>,
    bound_slope: f64,
    alpha: f64,
    delta: f64,
    t: f64,
    lambda_min: f64,
    lambda_max: f64,
) -> PyResult<GradTuple> {
    let problem = LinearRiskProblem {
        slopes: &slopes,
        slope_grads: &slope_grads,
        bound_slope,
        disutility: Disutility::cvar(delta).map_err(py_err)?,
        t,
        alpha,
        interval: interval(lambda_min, lambda_max)?,
    };
    Ok(grad_tuple(lambda_grad_kkt(&problem, Objective::StrictlyDecreasing).map_err(py_err)?))
}

/// Joint `(lambda, t)` calibration together with `d lambda / d theta` through the optimal `t`.
#[pyfunction]
#[pyo3(signature = (slopes, slope_grads, bound_slope, alpha, delta, lambda_min = 0.0, lambda_max = 1.0, eps = 1e-9))]
#[allow(clippy::too_many_arguments)]
fn lambda_grad_joint_linear(
    slopes: Vec<f64>,
    slope_grads: Vec<Vec<f64>>,
    bound_slope: f64,
    alpha: f64,
    delta: f64,
    lambda_min: f64,
    lambda_max: f64,
    eps: f64,
) -> PyResult<(CalibrationResult, GradTuple)> {
    let iv = interval(lambda_min, lambda_max)?;
    let (cal, g) = lambda_grad_joint(&slopes, &slope_grads, bound_slope, iv, alpha, delta, eps).map_err(py_err)?;
    Ok((cal.into(), grad_tuple(g)))
}

/// Conformal-training threshold `1 - s_(k)` from `(score, d score / d theta)` pairs.
#[pyfunction]
#[pyo3(signature = (scores, alpha, lambda_min = 0.0, lambda_max = 1.0))]
fn conftr_grad(scores: Vec<(f64, Vec<f64>)>, alpha: f64, lambda_min: f64, lambda_max: f64) -> PyResult<GradTuple> {
    Ok(grad_tuple(conftr_quantile_grad(&scores, alpha, interval(lambda_min, lambda_max)?).map_err(py_err)?))
}

/// Monte Carlo check of the guarantee on a built-in task (`seg`, `storage`, `synthetic`).
/// Returns the trial summary as a dict.
#[pyfunction]
#[pyo3(signature = (task, alpha, delta = None, trials = 1000, n_cal = 100, seed = 0, t = None, holdout = 400))]
#[allow(clippy::too_many_arguments)]
fn validate<'py>(
    py: Python<'py>,
    task: &str,
    alpha: f64,
    delta: Option<f64>,
    trials: usize,
    n_cal: usize,
    seed: u64,
    t: Option<f64>,
    holdout: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let task = match task {
        "seg" => ValidationTask::Seg,
        "storage" => ValidationTask::Storage,
        "synthetic" => ValidationTask::Synthetic,
        other => return Err(CorcError::new_err(format!("unknown task {other:?}"))),
    };
    let risk = match delta {
        None => RiskKind::Expectation,
        Some(delta) => RiskKind::Cvar { delta },
    };
    let req = ValidationRequest { trials, n_cal, seed, t, holdout, ..ValidationRequest::new(task, risk, alpha) };
    let s = py.detach(|| harness::run_validation(&req)).map_err(py_err)?.summary;
    let d = PyDict::new(py);
    d.set_item("alpha", s.alpha)?;
    d.set_item("delta", delta)?;
    d.set_item("n_cal", s.n_cal)?;
    d.set_item("n_trials", s.n_trials)?;
    d.set_item("infeasible_trials", s.infeasible_trials)?;
    d.set_item("mean_risk", s.mean_risk)?;
    d.set_item("mean_risk_se", s.mean_risk_se)?;
    d.set_item("cvar_risk", s.cvar_risk)?;
    d.set_item("cvar_risk_se", s.cvar_risk_se)?;
    d.set_item("mean_cost", s.mean_cost)?;
    d.set_item("cost_se", s.cost_se)?;
    d.set_item("mean_lambda", s.mean_lambda)?;
    d.set_item("lambda_se", s.lambda_se)?;
    d.set_item("passed", s.passed)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "corc")]
fn corc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CorcError", m.py().get_type::<CorcError>())?;
    m.add_class::<Loss>()?;
    m.add_class::<CalibrationResult>()?;
    m.add_function(wrap_pyfunction!(parse_losses, m)?)?;
    m.add_function(wrap_pyfunction!(crc_bisect, m)?)?;
    m.add_function(wrap_pyfunction!(corc_bisect, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_cvar_control, m)?)?;
    m.add_function(wrap_pyfunction!(tune_t, m)?)?;
    m.add_function(wrap_pyfunction!(joint_lambda_t, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_h_tilde, m)?)?;
    m.add_function(wrap_pyfunction!(cvar_empirical, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_grad_linear, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_grad_joint_linear, m)?)?;
    m.add_function(wrap_pyfunction!(conftr_grad, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
