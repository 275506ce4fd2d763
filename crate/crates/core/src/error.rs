use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}: expected {expected} bytes, found {found}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{}: unknown pixel format `{format}`", path.display())]
    UnknownPixelFormat { path: PathBuf, format: String },

    #[error("{}: malformed manifest: {source}", path.display())]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: malformed PGM: {reason}", path.display())]
    Pgm { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::DimensionMismatch {
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Runtime(_))
    }
}
