use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no valid masked pixel with positive depth")]
    EmptySelection,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("point cloud radius is zero")]
    ZeroScale,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("no valid pose hypothesis after {attempts} sampling attempts")]
    NoValidHypothesis { attempts: usize },

    #[error("only {found} correspondences survived extraction, need at least 3")]
    InsufficientCorrespondences { found: usize },

    #[error("visibility culling removed every point")]
    EmptyView,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
