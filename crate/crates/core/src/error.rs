//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the numerical kernels and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// The approximate transport solver stopped before its certified gap reached the target.
    #[error("solver did not reach gap target {target:.3e} (achieved {achieved:.3e})")]
    Convergence { achieved: f64, target: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn invalid_config(msg: impl Into<String>) -> Error {
    Error::InvalidConfiguration(msg.into())
}
