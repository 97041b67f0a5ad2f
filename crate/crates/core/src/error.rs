use thiserror::Error;

/// Errors raised by the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
