use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite gradient in tensor {tensor}, element {index}")]
    NonFiniteGradient { tensor: usize, index: usize },

    #[error("non-finite loss in {stage}: {detail}")]
    NonFiniteLoss { stage: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite {path}: run `{upstream}` first")]
    MissingPrerequisite { path: PathBuf, upstream: &'static str },

    #[error("config hash mismatch for {path}: artifact has {found}, current config is {expected} (use --force to override)")]
    ConfigMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
