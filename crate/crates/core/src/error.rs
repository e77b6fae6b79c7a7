use thiserror::Error;

use crate::types::TokenId;

pub type Result<T, E = CodecError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("index range {start}..{end} out of bounds for length {len}")]
    Bounds { start: usize, end: usize, len: usize },

    #[error("malformed hypothesis: {0}")]
    MalformedHypothesis(String),

    #[error("unknown token id {0}")]
    UnknownToken(TokenId),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid example: {0}")]
    Validation(String),

    #[error("search space of {size} placements exceeds oracle capacity ({reason})")]
    Capacity { size: u128, reason: String },

    #[error("fixture line {line}: {message}")]
    Fixture { line: usize, message: String },

    #[error("scorer failure: {0}")]
    Scorer(String),
}
