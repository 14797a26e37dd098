use std::io;

use thiserror::Error;

use crate::npy::NpyError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (level count, ranges, group sizes, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Argument outside the domain of a mathematical function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor contents that violate a contract (NaN, out-of-range index, empty input).
    #[error("data error: {0}")]
    Data(String),

    /// Caller broke an API contract, e.g. wrong prefix length.
    #[error("contract error: {0}")]
    Contract(String),

    #[error(transparent)]
    Npy(#[from] NpyError),

    /// Sidecar or checkpoint metadata problems.
    #[error("metadata error: {0}")]
    Metadata(String),

    /// Sidecar or checkpoint written by an incompatible version.
    #[error(
        "version mismatch: found {found}, expected {expected}; re-export with the current tool"
    )]
    Upgrade { found: u32, expected: u32 },

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
