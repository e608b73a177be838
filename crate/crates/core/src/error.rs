use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error at {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("DeepLIFT rescale rule requires a baseline forward trace")]
    MissingBaseline,

    #[error("batch statistics missing for batch-norm layer {layer}")]
    MissingStats { layer: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("sampling rate {rate} Hz cannot carry {frequency} Hz (Nyquist {nyquist} Hz) in feature {feature}")]
    Nyquist {
        feature: String,
        frequency: f64,
        rate: f64,
        nyquist: f64,
    },

    #[error("unknown subject {0}")]
    UnknownSubject(u32),

    #[error("{path}: checksum mismatch (expected {expected:08x}, found {found:08x})")]
    Checksum {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: shape mismatch: {detail}")]
    ShapeMismatch { path: PathBuf, detail: String },

    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("{path}:{line}: electrode {name} at ({x}, {y}) lies outside the unit disc")]
    OutOfDisc {
        path: PathBuf,
        line: usize,
        name: String,
        x: f64,
        y: f64,
    },

    #[error("electrodes {first} and {second} share the same coordinates")]
    DuplicateCoordinate { first: String, second: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad file contents or failed validation,
    /// as opposed to bad arguments.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}
