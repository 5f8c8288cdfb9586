//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // The io error is folded into the message rather than exposed as a
    // chain source, so wrappers do not print it twice.
    #[error("io error on {path}: {cause}")]
    Io {
        path: String,
        cause: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown item id(s): {}", .0.join(", "))]
    UnknownItems(Vec<String>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no interest set for exemplar {0}")]
    MissingExemplar(usize),

    #[error("llm client error: {0}")]
    Llm(String),

    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: String, msg: String },
}

impl Error {
    /// Wraps an io error with the path it occurred on.
    pub fn io(path: impl Into<String>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}
