use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("gradient tape already consumed by a backward pass")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{path}: invalid JSON: {message}")]
    Json { path: PathBuf, message: String },

    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedCheckpointVersion(u32),

    #[error("truncated checkpoint")]
    TruncatedCheckpoint,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint does not match requested architecture: {0}")]
    ModelMismatch(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("mask has no glitch pixels")]
    EmptyMask,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn image(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Image { path: path.into(), message: message.into() }
    }

    pub fn json(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Json { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
