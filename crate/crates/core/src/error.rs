use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("sample set is empty")]
    EmptySamples,
    #[error("loss {index} exceeds the bound at lambda = {lambda}: {loss} > {bound}")]
    BoundViolation {
        index: usize,
        lambda: f64,
        loss: f64,
        bound: f64,
    },
    #[error("objective is not finite (argument {argument} exceeds the overflow guard)")]
    NonFiniteObjective { argument: f64 },
    #[error("loss {index} is not nondecreasing in lambda")]
    NotMonotone { index: usize },
    #[error("no positive pixels in image")]
    NoPositivePixels,
    #[error("no negative pixels in image")]
    NoNegativePixels,
    #[error("no admissible value of t in the grid")]
    EmptyGrid,
    #[error("thresholds coincide near {location}")]
    TieDetected { location: f64 },
    #[error("sample sits on the disutility kink at lambda = {lambda}")]
    KinkAtSolution { lambda: f64 },
    #[error("KKT system is singular (condition number {condition:e})")]
    SingularKkt { condition: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch of {size} examples cannot be split into calibration and prediction parts")]
    BatchTooSmall { size: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Degenerate inputs for which the training loop drops the dlambda/dtheta term.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::TieDetected { .. } | Error::KinkAtSolution { .. } | Error::SingularKkt { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
