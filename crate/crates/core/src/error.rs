//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Operand shapes do not conform to the operation's shape rule.
    #[error("shape mismatch in {op}: left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// An operation produced a NaN or infinite value.
    #[error("non-finite value produced by {op}")]
    NumericOverflow { op: &'static str },

    /// An API contract was violated by the caller (e.g. backward from a
    /// non-scalar node).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration (empty partition, bad hyperparameter, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A metric is undefined for the given inputs (e.g. AUC with a
    /// single-class label set).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training diverged (NaN loss) or another runtime failure occurred.
    #[error("training aborted: {0}")]
    Diverged(String),

    /// Internal consistency failure that indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Checkpoint file is malformed, truncated, or belongs to a
    /// different schema.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
