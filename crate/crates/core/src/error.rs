use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported image format ({reason})")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("{path}: malformed image data ({reason})")]
    MalformedImage { path: PathBuf, reason: String },

    #[error("image has a zero dimension ({width}x{height}x{channels})")]
    EmptyImage {
        width: usize,
        height: usize,
        channels: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
