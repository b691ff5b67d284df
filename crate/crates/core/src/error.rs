use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error(
        "parameter sets disagree: missing {missing:?}, unexpected {unexpected:?}, shape mismatches {mismatched:?}"
    )]
    ParameterMismatch { missing: Vec<String>, unexpected: Vec<String>, mismatched: Vec<String> },

    #[error("non-finite {what} in `{name}`")]
    NonFinite { what: &'static str, name: String },

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("direction group {group} of `{name}` has zero norm; resample the direction")]
    DegenerateDirection { name: String, group: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },

    #[error("unknown parameter name `{0}`")]
    UnknownParameter(String),

    #[error("grid has no finite values")]
    NoFiniteValues,

    #[error("coordinate mismatch: {0}")]
    CoordinateMismatch(String),

    #[error("regime mismatch: checkpoint is `{checkpoint}`, requested loss is `{requested}`")]
    RegimeMismatch { checkpoint: String, requested: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape { op, left: left.to_vec(), right: right.to_vec() }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
