use thiserror::Error;

/// Failures while calibrating a polynomial.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("calibration needs at least {needed} point(s), got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
    #[error("calibration times must be strictly increasing (at index {index})")]
    Unordered { index: usize },
    #[error("duplicate calibration time near t = {time}")]
    DuplicateTime { time: f64 },
    #[error("non-finite calibration data at index {index}")]
    NonFinite { index: usize },
    #[error("requested degree {degree} exceeds the supported maximum of 3")]
    DegreeTooHigh { degree: usize },
}

/// Out-of-order access to a time-indexed record.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequencingError {
    #[error("sample at t = {time} does not follow the last stored time {last}")]
    NonIncreasingTime { time: f64, last: f64 },
    #[error("history is empty")]
    EmptyHistory,
    #[error("no producer window starts at or before t = {time}")]
    NoEligibleWindow { time: f64 },
}

/// Failures raised while advancing a single subsystem.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubsystemError {
    #[error("subsystem `{label}` diverged after t = {last_good_time}")]
    Divergence { label: String, last_good_time: f64 },
    #[error("subsystem `{label}`: {detail}")]
    ContractViolation { label: String, detail: String },
}

/// Top-level error of the co-simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Sequencing(#[from] SequencingError),
    #[error(transparent)]
    Subsystem(#[from] SubsystemError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed data: {0}")]
    Malformed(String),
}

impl Error {
    /// True when the failure is a runtime divergence rather than a setup problem.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Subsystem(SubsystemError::Divergence { .. }))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
