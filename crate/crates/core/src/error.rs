use thiserror::Error;

use crate::credit::Stream;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("malformed hint: token {token} at position {position} is outside a vocabulary of {vocab}")]
    MalformedHint {
        position: usize,
        token: usize,
        vocab: usize,
    },

    #[error("{stream} queue is full ({len}/{capacity} units, {incoming} incoming)")]
    Backpressure {
        stream: Stream,
        len: usize,
        capacity: usize,
        incoming: usize,
    },

    #[error("non-finite gradient in {stream} update (coordinate {index}: {value})")]
    NonFiniteGradient {
        stream: Stream,
        index: usize,
        value: f64,
    },

    #[error("training complete: the active pool is empty")]
    TrainingComplete,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
