use std::path::PathBuf;

use thiserror::Error;

use crate::types::Category;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A loaded or constructed value broke a data-model invariant.
    #[error("trajectory `{trajectory}`: {check}")]
    Invariant { trajectory: String, check: String },

    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid action id {action} (action count {action_count})")]
    InvalidAction { action: usize, action_count: usize },

    #[error("retry budget of {attempts} exhausted while sampling a {category:?} trajectory")]
    RetryBudget { category: Category, attempts: usize },

    #[error("objective: {0}")]
    Objective(String),

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invariant(trajectory: impl Into<String>, check: impl Into<String>) -> Self {
        Error::Invariant {
            trajectory: trajectory.into(),
            check: check.into(),
        }
    }
}
