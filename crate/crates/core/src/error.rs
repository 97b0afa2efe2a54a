use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: index {index} out of range (limit {limit})")]
    Index {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("environment: {0}")]
    Environment(String),

    #[error("malformed draft after {0} attempts")]
    MalformedDraft(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
