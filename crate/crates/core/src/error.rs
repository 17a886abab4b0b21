use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unexpected label `{label}` (expected one of: {expected})")]
    UnknownLabel { label: String, expected: String },

    #[error("span {id}: annotation text {annotated:?} does not match document text {actual:?}")]
    SpanTextMismatch {
        id: String,
        annotated: String,
        actual: String,
    },

    #[error("span {id} [{start}, {end}) is out of bounds for a text of {len} characters")]
    SpanOutOfBounds {
        id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("span {id} [{start}, {end}) crosses the sentence boundary [{sentence_start}, {sentence_end})")]
    SpanCrossesSentence {
        id: String,
        start: usize,
        end: usize,
        sentence_start: usize,
        sentence_end: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no precomputed embedding for {0}")]
    MissingEmbedding(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("config line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Errors caused by the input data rather than by the program.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Dimension(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
