//! Library-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid sparse matrix: {0}")]
    InvalidSparse(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("format error in {format}: {detail}")]
    Format { format: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(format: &str, detail: impl Into<String>) -> Self {
        Error::Format {
            format: format.to_string(),
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad user input (configs, files, arguments)
    /// rather than internal numeric failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::Checkpoint(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
