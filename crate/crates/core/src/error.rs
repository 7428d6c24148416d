use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("scene validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
