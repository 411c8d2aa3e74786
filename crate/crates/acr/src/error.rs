//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the retrieval engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line-oriented data file (corpus, QA set, graph, lexical index)
    /// failed validation. `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    /// Boolean query syntax error. `offset` is a byte offset into the
    /// query string.
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("provider error: {0}")]
    Provider(String),

    #[error("provider returned status {status}: {body}")]
    ProviderStatus { status: u16, body: String },

    #[error("embedding provider mismatch: index built with {expected:?}, query uses {actual:?}")]
    ProviderMismatch { expected: String, actual: String },

    #[error("duplicate chunk id {0:?}")]
    DuplicateChunkId(String),

    /// Persisted index is unreadable: bad magic, unsupported version,
    /// truncation, or checksum mismatch.
    #[error("index format error: {0}")]
    IndexFormat(String),

    #[error("unknown entity id {0:?}")]
    UnknownEntity(String),

    #[error("chunk set mismatch: {0}")]
    ChunkSetMismatch(String),

    /// A chat response could not be parsed into a decision, even after a
    /// re-prompt.
    #[error("decision parse error: {0}")]
    DecisionParse(String),

    /// Wraps an error with the pipeline stage it occurred in.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("no sources configured")]
    NoSources,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Attach a pipeline stage name to an error.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
