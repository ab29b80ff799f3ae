use thiserror::Error;

/// Errors raised by the GPN inference routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("graph contains a cycle")]
    Cycle,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix not positive definite after jitter escalation")]
    NotPositiveDefinite,
    #[error("hyperparameter optimization did not converge (best objective {best_objective:.6})")]
    Optimization {
        best_objective: f64,
        best: crate::kernel::Hyperparams,
    },
    #[error("archive integrity: {0}")]
    Archive(String),
    #[error("value {value} outside range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },
    #[error("io: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
