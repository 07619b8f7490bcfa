use std::path::PathBuf;

/// Errors produced by the hashing toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("parse error in {path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        /// Line number (text formats) or byte offset (binary formats).
        location: String,
        message: String,
    },

    #[error("training aborted: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
