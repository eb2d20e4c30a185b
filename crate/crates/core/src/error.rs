use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter, shape or precondition check failed.
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("index {index} out of range 0..{len}")]
    Index { index: usize, len: usize },

    /// Data that cannot be learned by a diffusion model (e.g. Dirac increments).
    #[error("degenerate data{}: {reason}", slot.map(|s| format!(" at slot {s}")).unwrap_or_default())]
    Degenerate { slot: Option<usize>, reason: String },

    /// A computation produced NaN/inf or otherwise broke down.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Prefix the message with where the failure happened.
    pub fn prefixed(self, prefix: &str) -> Self {
        match self {
            Error::Validation(m) => Error::Validation(format!("{prefix}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{prefix}: {m}")),
            Error::Format(m) => Error::Format(format!("{prefix}: {m}")),
            Error::Degenerate { slot, reason } => Error::Degenerate { slot, reason: format!("{prefix}: {reason}") },
            other => other,
        }
    }

    /// Attach a slot index to a degenerate-data error.
    pub fn at_slot(self, slot: usize) -> Self {
        match self {
            Error::Degenerate { reason, .. } => Error::Degenerate { slot: Some(slot), reason },
            Error::Numeric(msg) => Error::Numeric(format!("slot {slot}: {msg}")),
            other => other,
        }
    }
}
