use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("missing clue field `{0}` required by the model's clue set")]
    MissingClue(&'static str),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
