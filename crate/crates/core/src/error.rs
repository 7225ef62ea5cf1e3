use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the routing library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid trace tree `{problem_id}`: {message}")]
    InvalidTree { problem_id: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid action {action} at model index {current}")]
    InvalidAction { action: String, current: usize },

    #[error("trace `{problem_id}` has no branch for action {action} at depth {depth}")]
    MissingBranch {
        problem_id: String,
        action: String,
        depth: usize,
    },

    #[error("environment exhausted: no trace trees left to serve")]
    Exhausted,

    #[error("episode is not active (call reset first, or it already terminated)")]
    EpisodeInactive,

    #[error("state space too large for exact enumeration: {estimate} cells (limit {limit})")]
    TooLarge { estimate: u64, limit: u64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
