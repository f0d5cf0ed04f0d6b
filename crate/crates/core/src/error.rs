use std::io;

use thiserror::Error;

/// Everything that can go wrong inside the toolkit.
///
/// Variants fall into two broad groups that callers (notably the CLI) map
/// to different exit statuses: data/format problems and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("utterance '{utt_id}' is too short: {samples} samples, need at least {needed}")]
    TooShort { utt_id: String, samples: usize, needed: usize },

    #[error("utterance '{0}' has no frames left after voice activity detection")]
    EmptyAfterVad(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {class} is starved: {frames} frames, need at least {needed}")]
    StarvedClass { class: usize, frames: f64, needed: f64 },

    #[error("missing {what} for '{key}'")]
    Missing { what: &'static str, key: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { format, reason: reason.into() }
    }

    /// True for failures of the numerics rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
