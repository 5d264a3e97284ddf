use std::path::PathBuf;

use thiserror::Error;

use crate::params::LayerShape;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: Vec<LayerShape>,
        right: Vec<LayerShape>,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("infeasible memory bounds: {0}")]
    Infeasible(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{stage} diverged at iteration {iteration}")]
    Divergence {
        stage: &'static str,
        iteration: usize,
    },

    #[error("config error at line {line} (key `{key}`): {reason}")]
    Config {
        key: String,
        line: usize,
        reason: String,
    },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed report: {source}")]
    Report {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
