use std::path::PathBuf;

use crate::item_space::Token;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate item {0:?}")]
    DuplicateItem(Vec<Token>),
    #[error("malformed item {tokens:?}: {reason}")]
    MalformedItem { tokens: Vec<Token>, reason: &'static str },
    #[error("token sequence {0:?} is not in the catalog")]
    OutOfCatalog(Vec<Token>),
    #[error("unknown item id {0}")]
    UnknownItem(usize),
    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("group of size {0} is too small for advantage normalization (need at least 2)")]
    GroupTooSmall(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("variable is not a scalar node of this tape")]
    DetachedNode,
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric abort: {0}")]
    NumericAbort(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NumericAbort(_) => 4,
            Error::ContractViolation(_) | Error::ShapeMismatch(_) | Error::DetachedNode => 5,
            _ => 3,
        }
    }
}
