use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Numeric routines never panic on bad input; they
/// return one of these variants with enough context to locate the call site.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{context}: spatial dims {h}x{w} must both be even")]
    OddSpatialDims {
        context: &'static str,
        h: usize,
        w: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown region is empty; losses and metrics are undefined without it")]
    EmptyUnknownRegion,

    #[error("non-finite loss at step {step} (phase {phase}); aborting training")]
    NonFiniteLoss { step: u64, phase: u8 },

    #[error("{path}: {reason}")]
    BadImage { path: PathBuf, reason: String },

    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },

    #[error("dataset {path}: {reason}")]
    BadDataset { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

impl Error {
    pub fn shape(context: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
