//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A point violates open-ball membership for its curvature.
    #[error("point outside the Poincaré ball: c*||x||^2 = {0} >= 1")]
    BallViolation(f64),

    /// Non-finite value where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Incompatible tensor/vector shapes.
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Empty input where at least one element is required.
    #[error("empty input in {0}")]
    EmptyInput(&'static str),

    /// Graph file parsing / validation failures.
    #[error("graph data error: {0}")]
    GraphData(String),

    /// I/O wrapper.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Checkpoint decode failures (bad magic, version, truncation).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training diverged (non-finite loss).
    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    /// Configuration rejected before any work started.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
