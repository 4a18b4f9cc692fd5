//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{kind} id not found: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("profile parse error: {reason} (raw: {raw:?})")]
    ProfileParse { reason: String, raw: String },

    #[error("replay cache miss for digest {digest}")]
    CacheMiss { digest: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no parsable 0/1 judgment in response: {raw:?}")]
    JudgmentParse { raw: String },

    #[error("stale forward trace: parameters changed since the forward pass")]
    StaleTrace,

    #[error("non-finite loss on sample {sample_id} (parameter norm {param_norm})")]
    NonFiniteLoss { sample_id: String, param_norm: f64 },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
