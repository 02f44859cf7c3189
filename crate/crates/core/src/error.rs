use std::path::PathBuf;

use thiserror::Error;

use crate::harness::config::ConfigError;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {what} (got {value})")]
    Domain { what: &'static str, value: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension { context: &'static str, expected: usize, got: usize },

    #[error("environment stepped before reset")]
    NotReset,

    #[error("invalid agent kind `{0}` (expected td3, meta_td3 or random)")]
    AgentKind(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64) -> Self {
        Error::Domain { what, value }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { context, expected, got }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
