use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
///
/// `is_user_error` distinguishes problems an operator can fix (bad config,
/// malformed files, missing paths) from internal failures such as a training
/// run producing non-finite values.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dim {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("bad file format at byte {offset} in {path}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite {what} at training step {step}")]
    NonFinite { what: &'static str, step: usize },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by operator input rather than internal failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Format { .. } | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
