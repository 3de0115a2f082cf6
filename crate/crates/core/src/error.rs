use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied knob or shape violates its contract.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A dataset or checkpoint file could not be decoded.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// The dataset content is valid on disk but unsuitable for the request.
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite value.
    #[error("numeric divergence: {0}")]
    Numeric(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
