use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("field contains non-finite value at cell {index}")]
    NonFinite { index: usize },

    #[error("{0}")]
    Domain(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("incompatible source: mean {mean:.3e} exceeds compatibility tolerance {tolerance:.3e}")]
    IncompatibleSource { mean: f64, tolerance: f64 },

    #[error("invalid initial data: {0}")]
    InitialData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("time step aborted at t = {t}: {reason}")]
    StepAborted { t: f64, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
