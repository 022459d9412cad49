use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op}: value out of range: {detail}")]
    OutOfRange { op: &'static str, detail: String },

    #[error("backward: root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("input {height}x{width} is too small for downsample factor {factor}: need at least {factor}x{factor}")]
    InputTooSmall {
        height: usize,
        width: usize,
        factor: usize,
    },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Image(#[from] ImageError),

    #[error("no usable images found in {0}")]
    EmptyDataset(PathBuf),

    #[error("non-finite loss at iteration {iteration}: {breakdown}")]
    NonFiniteLoss { iteration: usize, breakdown: String },

    #[error("non-finite gradient at iteration {iteration} in parameter tensor {tensor}")]
    NonFiniteGradient { iteration: usize, tensor: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}

/// Failures while reading or writing a model checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic {0:02x?})")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures while decoding or encoding raster images.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format: {0}")]
    Unsupported(String),

    #[error("corrupt image stream: {0}")]
    Corrupt(String),

    #[error("invalid image: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
