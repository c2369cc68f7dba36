//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not conform.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Invalid configuration value or constraint violation.
    #[error("config error: {0}")]
    Config(String),

    /// API misuse (wrong data type for an operation, out-of-range argument).
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data violates a precondition (non-finite values, bad simplex).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed binary file; `offset` is the byte position of the problem.
    #[error("format error in {path} at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    /// Checkpoint failed CRC or version validation.
    #[error("corrupt checkpoint {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    /// Inverse Bayesian update would produce non-positive precision.
    #[error("singular inverse update: rho {rho} <= alpha {alpha}")]
    SingularInverse { rho: f64, alpha: f64 },

    /// Metric cannot be computed on the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training produced a non-finite loss; `dump` names every term.
    #[error("non-finite loss in term `{term}`; breakdown: {dump}")]
    NonFinite { term: String, dump: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code contract: 1 for user-facing usage/config errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
