use thiserror::Error;

use crate::lm::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("prefix {prefix:?} is unreachable or longer than the maximum length")]
    UnknownPrefix { prefix: Vec<TokenId> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("pruned conditional at prefix {prefix:?} has zero mass")]
    DegenerateSupport { prefix: Vec<TokenId> },

    #[error("enumeration needs {required} leaves but the budget is {budget}")]
    BudgetExceeded { required: u64, budget: u64 },

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("invalid chain state: {0}")]
    InvalidState(String),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
