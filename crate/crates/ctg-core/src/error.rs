use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}:{line}: malformed line: {msg}")]
    MalformedLine { path: String, line: usize, msg: String },

    #[error("{path}:{line}: unknown node id {id}")]
    UnknownNode { path: String, line: usize, id: i64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite values in output")]
    NonFinite { op: &'static str },

    #[error("tensor is detached from this tape")]
    Detached,

    #[error("tape already consumed by backward; record a fresh tape")]
    TapeConsumed,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{0}")]
    Invalid(String),
}
