//! Library error type.

use thiserror::Error;

/// Errors surfaced by model construction, storage, and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Descriptor dimensions disagree between kernels or sets.
    #[error("descriptor dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An operation needs at least one kernel.
    #[error("kernel set is empty")]
    EmptyKernelSet,

    /// Conditioning gave all-zero weights and retries were exhausted.
    #[error("degenerate conditional: all kernel weights vanished at the query descriptor")]
    DegenerateConditional,

    /// A point cloud was empty or too small for the requested operation.
    #[error("point cloud too small: {got} points, need {need}")]
    CloudTooSmall { got: usize, need: usize },

    /// No contact model survived selection for any demonstrated grasp.
    #[error("no contact models survived selection; nothing to train on")]
    NothingLearned,

    /// A stored model file does not match the expected schema version.
    #[error("unsupported store version {got}, expected {expected}")]
    StoreVersion { got: u32, expected: u32 },

    /// Grasp generation could not produce any candidate.
    #[error("no grasp candidates generated: {0}")]
    NoCandidates(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::InvalidArgument`] with formatted text.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
