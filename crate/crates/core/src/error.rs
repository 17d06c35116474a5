use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid model directory {path}: {message}")]
    Model { path: PathBuf, message: String },

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u64),

    #[error("refusing to overwrite existing model directory {0} (use force)")]
    WouldOverwrite(PathBuf),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input is not whitened: {0}")]
    NotWhitened(String),

    #[error("symmetric decorrelation failed: {0}")]
    Decorrelation(String),

    #[error("model has not been sign-normalized")]
    NotSignNormalized,

    #[error("intruder generation failed: {0}")]
    Intruder(String),

    #[error("invalid annotation record: {0}")]
    Record(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
