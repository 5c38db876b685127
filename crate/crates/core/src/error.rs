use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the simulator and the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input `{name}`: {reason}")]
    InvalidInput { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("fit failed: {0}")]
    Fit(#[from] FitFailure),

    #[error("ill-posed deconvolution: {0}")]
    IllPosed(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Reasons a nonlinear least-squares fit can fail.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitFailure {
    #[error("record carries no oscillation to fit")]
    NoOscillation,
    #[error("record spans {cycles:.2} Larmor cycles, at least {required} needed")]
    TooFewCycles { cycles: f64, required: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("fitted decay rate {0:.3e} is not positive")]
    NonPositiveDecay(f64),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput { .. } => "invalid_input",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::Fit(_) => "fit_failure",
            Error::IllPosed(_) => "ill_posed",
            Error::Calibration(_) => "calibration",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code associated with [`Error::category`].
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput { .. } => 2,
            Error::Io { .. } | Error::Parse { .. } => 3,
            Error::GridMismatch(_) => 4,
            Error::Fit(_) | Error::IllPosed(_) | Error::Calibration(_) => 5,
        }
    }
}
