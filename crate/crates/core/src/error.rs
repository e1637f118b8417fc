use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("invalid action {action} in state at node {node}")]
    InvalidAction { node: usize, action: String },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("all entries masked")]
    AllMasked,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("search budget exceeded after {0} expansions")]
    BudgetExceeded(usize),

    #[error("checkpoint mismatch: field `{field}` expected {expected}, found {found}")]
    CheckpointMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
