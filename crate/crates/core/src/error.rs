//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("line {line}: rating {rating} outside [1, 5]")]
    RatingOutOfRange { line: usize, rating: i64 },

    #[error("dataset contains no events")]
    EmptyDataset,

    #[error("similarity of a user with itself is undefined (user {0})")]
    SameUser(usize),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFiniteValue(String),

    #[error("training diverged at round {round}, {phase} phase")]
    Diverged { round: usize, phase: &'static str },

    #[error("unknown user {0}")]
    UnknownUser(usize),

    #[error("unknown item {0}")]
    UnknownItem(usize),

    #[error("test split is empty")]
    EmptyTestSet,

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
