use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] voxmark_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    /// Process exit status: 2 for usage, config and input problems, 3 for
    /// numerical failure, 4 for degenerate statistics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(voxmark_core::Error::Divergence { .. }) => 3,
            Error::Core(voxmark_core::Error::DegenerateModel(_) | voxmark_core::Error::DegenerateTest(_)) => 4,
            _ => 2,
        }
    }
}
