use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt data in {path}: {reason}")]
    CorruptData { path: PathBuf, reason: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("expected {expected} channel(s), got {actual}")]
    WrongChannelCount { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid kernel spec: size={size}, sigma={sigma}")]
    InvalidKernelSpec { size: usize, sigma: f64 },

    #[error("threshold {threshold} outside 1..={annotators}")]
    InvalidThreshold { threshold: usize, annotators: usize },

    #[error("invalid annotation set: {0}")]
    InvalidAnnotationSet(String),

    #[error("degenerate input{}: {reason}", pair.as_ref().map(|(a, b)| format!(" for pair ({a}, {b})")).unwrap_or_default())]
    DegenerateInput {
        reason: String,
        pair: Option<(String, String)>,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("probability rows do not sum to 1 (row {row}: {sum})")]
    NotNormalized { row: usize, sum: f64 },

    #[error("non-finite input at index {0}")]
    NonFiniteInput(usize),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("spatial dims {h}x{w} not divisible by {divisor}")]
    IndivisibleSpatialDims { h: usize, w: usize, divisor: usize },

    #[error("backward called without a preceding forward pass")]
    NoForwardPass,

    #[error("cannot change input channels from {from} to {to}")]
    ShrinkNotSupported { from: usize, to: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint config hash {found} does not match expected {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("dataset incomplete: {0}")]
    DatasetMissing(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no face mask for id {0}")]
    MissingMask(String),

    #[error("refusing to overwrite existing output {0} (use --force)")]
    OutputExists(PathBuf),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// True for errors caused by the inputs rather than by the environment.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NoForwardPass)
    }
}
