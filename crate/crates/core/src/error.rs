use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorefError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("genre {0:?} is not in the configured genre vocabulary")]
    UnknownGenre(String),

    #[error("shape mismatch for {tensor}: expected {expected:?}, found {found:?}")]
    Shape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("illegal action: {0}")]
    IllegalAction(String),

    #[error("document {0} has no gold clusters")]
    MissingGold(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Mismatch(String),
}

impl CorefError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorefError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        CorefError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end: 2 for bad input, 3 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CorefError::Parse { .. }
            | CorefError::Validation { .. }
            | CorefError::UnknownGenre(_)
            | CorefError::Config(_)
            | CorefError::MissingGold(_)
            | CorefError::Shape { .. }
            | CorefError::Mismatch(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CorefError>;
