use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("graph: {0}")]
    Graph(String),

    #[error("gradient check: non-finite loss when perturbing `{param}` at coordinate {coord}")]
    NonFiniteProbe { param: String, coord: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("document `{doc_id}`: {msg}")]
    InvalidOffsets { doc_id: String, msg: String },

    #[error("vocabulary: unknown token id {0}")]
    UnknownToken(usize),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("model: {0}")]
    Model(String),

    #[error("non-finite loss at step {step} ({breakdown})")]
    NonFinite { step: u64, breakdown: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
