use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("unsupported format in {path}: {message}")]
    Unsupported { path: PathBuf, message: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("source and microphone coincide at {0:?}")]
    Singularity([f64; 3]),
    #[error("energy decay curve does not reach {needed_db} dB")]
    InsufficientDecay { needed_db: f64 },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    Numeric { op: &'static str },
    #[error("data error for utterance {utterance}: {message}")]
    Data { utterance: String, message: String },
    #[error("unknown utterance {0}")]
    Lookup(String),
    #[error("invalid state: {0}")]
    State(String),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn data(utterance: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            utterance: utterance.into(),
            message: message.into(),
        }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Argument(_) => ErrorClass::Usage,
            Error::Numeric { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable tag.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Unsupported { .. } => "unsupported",
            Error::EmptyInput(_) => "empty_input",
            Error::Argument(_) => "argument",
            Error::Singularity(_) => "singularity",
            Error::InsufficientDecay { .. } => "insufficient_decay",
            Error::Shape { .. } => "shape",
            Error::Numeric { .. } => "numeric",
            Error::Data { .. } => "data",
            Error::Lookup(_) => "lookup",
            Error::State(_) => "state",
        }
    }
}
