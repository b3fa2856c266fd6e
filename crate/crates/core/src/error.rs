use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes; the message names both shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid argument value (out-of-range label, negative count, ...).
    #[error("invalid value: {0}")]
    Value(String),

    /// Misuse of the autodiff tape (non-scalar loss, consumed tape, ...).
    #[error("tape error: {0}")]
    Tape(String),

    /// Training aborted on the first non-finite intermediate.
    #[error("non-finite value first produced by op `{op}` (tape node {node})")]
    NonFinite { op: &'static str, node: usize },

    /// Bad configuration file or option combination.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint/container problems: bad magic, version or shape mismatch,
    /// truncated payload.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Dataset or event-stream problems.
    #[error("data error: {0}")]
    Data(String),

    /// Profiler input problems (unknown layer kind, trace mismatch).
    #[error("profiler error: {0}")]
    Profile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
