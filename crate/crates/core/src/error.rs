use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error("unsupported color type {color:?} in {path} (expected 8/16-bit gray or RGB)")]
    UnsupportedColor { path: PathBuf, color: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver diverged after {iterations} iterations (energy rose for {streak} consecutive steps); use a smaller step size")]
    Divergence { iterations: usize, streak: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("archive format error: {0}")]
    Format(String),

    #[error("archive version mismatch: file has {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("training stopped at iteration {iteration}: {reason}; last good state saved to {}", checkpoint.as_ref().map_or("<not saved>".to_string(), |p| p.display().to_string()))]
    TrainingAborted {
        iteration: usize,
        reason: String,
        checkpoint: Option<PathBuf>,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
