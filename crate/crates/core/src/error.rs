use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PnrError>;

#[derive(Debug, Error)]
pub enum PnrError {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint payload error: {0}")]
    Payload(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PnrError {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        PnrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PnrError::Dimension(_) | PnrError::Config(_) | PnrError::Json(_) => 2,
            PnrError::Numerical(_) => 3,
            PnrError::Format(_) | PnrError::Version { .. } | PnrError::Payload(_) | PnrError::Io { .. } => 4,
        }
    }
}
