//! Crate-wide error type. Variants mirror the failure classes surfaced at the
//! public API: shape disagreements, caller misuse, semantic validation of
//! values, malformed on-disk bytes, and protocol violations between federated
//! parties.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// The API was called in a way that is never valid (wrong graph, non-scalar
    /// backward root, mismatched gradient structures).
    #[error("usage error: {0}")]
    Usage(String),

    /// Values violate a documented domain (pixel out of [0,1], tau outside
    /// (0,1), empty event stream, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed binary input; `offset` is the byte position where decoding
    /// failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Federated messages that cannot be combined (e.g. mismatched model spec
    /// hashes at aggregation).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format { offset, message: msg.into() }
    }
    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
