//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a domain precondition (bad shape, bad range, bad config).
    #[error("validation: {0}")]
    Validation(String),

    /// An oracle capability the attack needs is not available
    /// (e.g. gradients requested from a hard-label oracle).
    #[error("capability: {0}")]
    Capability(String),

    /// Malformed wire frame. `offset` is the byte position where decoding failed.
    #[error("protocol error at byte {offset}: {msg}")]
    Protocol { offset: usize, msg: String },

    /// Iterative calibration did not converge.
    #[error("calibration: {0}")]
    Calibration(String),

    /// Estimator training diverged beyond recovery.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn capability(msg: impl Into<String>) -> Self {
        Error::Capability(msg.into())
    }

    pub fn protocol(offset: usize, msg: impl Into<String>) -> Self {
        Error::Protocol {
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
