//! Error type shared by all core modules.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by image I/O, network evaluation, training, and metrics.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),

    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },

    #[error("non-finite intensity at index {index}")]
    NonFiniteIntensity { index: usize },

    #[error("intensity {value} at index {index} outside [0,1]")]
    IntensityOutOfRange { index: usize, value: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("roi '{name}' out of bounds for {height}x{width} image")]
    RoiOutOfBounds {
        name: String,
        height: usize,
        width: usize,
    },

    #[error("invalid roi '{name}': {detail}")]
    InvalidRoi { name: String, detail: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("loss error: {0}")]
    Loss(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}: training diverged")]
    Diverged { epoch: usize, step: usize },

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(what: impl Into<String>, detail: impl Into<String>) -> Self {
        CoreError::Malformed {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
