use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LfcError>;

#[derive(Debug, Error)]
pub enum LfcError {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("simulation diverged: |delta_f| = {delta_f:.4} Hz exceeds {f_max} Hz")]
    Diverged { delta_f: f64, f_max: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("PID tuning failed: every candidate in the grid diverged")]
    TuningFailed,

    #[error("parse error in {path}: field `{field}`: {reason}")]
    Parse {
        path: String,
        field: String,
        reason: String,
    },

    #[error("config error: key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LfcError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            LfcError::MissingFile(path)
        } else {
            LfcError::Io { path, source }
        }
    }

    pub(crate) fn parse(
        path: impl Into<String>,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        LfcError::Parse {
            path: path.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        LfcError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
