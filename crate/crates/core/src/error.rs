use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VinetError>;

#[derive(Debug, Error)]
pub enum VinetError {
    /// A precondition of an operation was not met (shapes, ranges, labels).
    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("sequence too short: {frames} frames, clip length {clip_len}")]
    SequenceTooShort { frames: usize, clip_len: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl VinetError {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        VinetError::Contract { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VinetError::Io { path: path.into(), source }
    }
}
