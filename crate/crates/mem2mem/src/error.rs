//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform to an op's arity or broadcasting rules.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Softmax over a row whose entries are all masked out.
    #[error("softmax over an all-masked row (row {row})")]
    AllMasked { row: usize },

    /// Numeric domain violation (log of a non-positive value, zero denominator).
    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    /// Backward already consumed this graph; re-run the forward pass first.
    #[error("gradients already taken for this graph; rebuild the forward pass")]
    GraphConsumed,

    /// A gradient became NaN or infinite.
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Document ids present in one file but missing from the other.
    #[error("id mismatch: missing ids {0:?}")]
    IdMismatch(Vec<String>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
