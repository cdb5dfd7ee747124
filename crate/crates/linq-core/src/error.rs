use thiserror::Error;

/// Errors produced by model construction, solvers and learners.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An internal computation failed (non-convergence, singular system, ...).
    /// The message carries diagnostics.
    #[error("internal error: {0}")]
    Internal(String),

    /// Anchor discovery found more hull vertices than features. The offending
    /// vertex rows are reported so the caller can extend the feature map.
    #[error("anchors not found: {} hull vertices exceed the feature dimension: {0:?}", .0.len())]
    AnchorsNotFound(Vec<usize>),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CoreError::Internal(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
