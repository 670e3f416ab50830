use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("conjugate gradient breakdown: operator not positive definite (curvature {curvature:e})")]
    CgBreakdown { curvature: f64 },

    #[error("Newton iteration did not converge at step {step}: residual {residual:e} after {iterations} iterations")]
    NewtonNotConverged {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("trajectory mismatch: {0}")]
    TrajectoryMismatch(String),

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config: {0}")]
    ConfigValidation(String),

    #[error("{context}: {source}")]
    Stage {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(line: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Stage {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the configuration rather than the solvers.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config { .. } | Error::ConfigValidation(_) => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
