use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("covariance matrix is not positive semidefinite ({kernel} on {grid}): factorization failed at jitter {jitter:e}")]
    NotPositiveSemidefinite {
        kernel: String,
        grid: String,
        jitter: f64,
    },

    #[error("singular information matrix: condition number {condition:e} exceeds {limit:e}")]
    SingularInformation { condition: f64, limit: f64 },

    #[error("insufficient sample: need at least {needed} values, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors caused by bad input/configuration rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::OutOfDomain(_)
                | Error::UnsupportedModel(_)
                | Error::Config(_)
                | Error::Io { .. }
                | Error::Csv { .. }
                | Error::Json { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
