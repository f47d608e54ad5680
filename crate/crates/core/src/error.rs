use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped so callers (the CLI in particular) can map them
/// onto coarse classes: configuration, data, and numeric failures.
#[derive(Debug, Error)]
pub enum AweError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("average precision undefined: {0}")]
    UndefinedAp(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification of an [`AweError`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl AweError {
    pub fn class(&self) -> ErrorClass {
        match self {
            AweError::InvalidConfig(_) => ErrorClass::Config,
            AweError::DimensionMismatch { .. }
            | AweError::InvalidInput(_)
            | AweError::Format { .. }
            | AweError::Io { .. } => ErrorClass::Data,
            AweError::DegenerateVector(_) | AweError::NonFinite(_) | AweError::UndefinedAp(_) => {
                ErrorClass::Numeric
            }
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AweError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        AweError::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T, E = AweError> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(AweError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
