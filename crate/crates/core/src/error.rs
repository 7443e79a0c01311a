use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("softmax over an empty axis")]
    EmptyAxis,

    #[error("graph already consumed by a previous backward pass; re-run the forward pass")]
    StaleGraph,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("out-of-vocabulary word `{0}`")]
    OutOfVocabulary(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("prefix has {got} layers but the base model has {expected}")]
    PrefixLayers { expected: usize, got: usize },

    #[error("retrieval score {0} is not positive")]
    NonPositiveScore(f64),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("requested K={k} exceeds corpus size {corpus}")]
    KTooLarge { k: usize, corpus: usize },

    #[error("stale prompt cache ({0}); rebuild it with the current prompt bank and hyper model")]
    StaleCache(String),

    #[error("document {0} not found")]
    NotFound(u64),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("missing {}: run `{command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
