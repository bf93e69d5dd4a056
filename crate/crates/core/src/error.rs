use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or unsupported configuration (bad dims, unknown ids, odd encodings).
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data failed a domain check (limits, factors, timestamps).
    #[error("validation error: {0}")]
    Validation(String),
    /// A file did not match its schema.
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    /// Non-finite values showed up in the simulation or optimization.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// An API was called in a state that does not allow it.
    #[error("usage error: {0}")]
    Usage(String),
    /// Frozen hand policy changed underneath glove training.
    #[error("frozen policy digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Io { .. } => 2,
            Error::Validation(_) | Error::Parse { .. } | Error::Json(_) => 3,
            Error::DigestMismatch { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}
