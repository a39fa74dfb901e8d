use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("video {video} appears in both the train and test splits")]
    SplitOverlap { video: String },

    #[error("dangling reference: {path} does not exist")]
    DanglingReference { path: PathBuf },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask contains label {label}, expected 0 or 1")]
    BadLabel { label: u8 },

    #[error("mask has no dissection-zone pixels")]
    NoRegion,

    #[error("prompt coordinate ({x}, {y}) outside a {width}x{height} image")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("image side {side} is not a multiple of patch size {patch}")]
    IndivisibleSize { side: usize, patch: usize },

    #[error("encoder already carries LoRA adapters")]
    AlreadyAdapted,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("decoder received no feature levels")]
    EmptyFeatures,

    #[error("metric undefined for class {class}: empty union")]
    UndefinedMetric { class: usize },

    #[error("corruption severity {0} outside 1..=5")]
    BadSeverity(u8),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("unknown prompt kind {0:?}")]
    UnknownPromptKind(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
