use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("gold cell is unreachable from every initial cell of agent i")]
    UnreachableGold,

    #[error("horizon must be at least 1, got {0}")]
    InvalidHorizon(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The observation has zero likelihood under the predicted belief.
    #[error("observation has zero likelihood under the predicted belief")]
    ZeroLikelihood,

    #[error("task generation exhausted after {attempts} rejected samples")]
    GenerationExhausted { attempts: usize },

    #[error("step called on a finished episode")]
    StepAfterDone,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed container {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
