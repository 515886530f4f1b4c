use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed hierarchy: cycles, conflicting parents.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("unknown concept `{0}`")]
    UnknownConcept(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{source_name}:{line}: {message}")]
    Format {
        source_name: String,
        line: usize,
        message: String,
    },

    /// A row, node or cluster configuration on which the requested quantity is undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("graph is not connected: {0}")]
    Connectivity(String),

    #[error("numeric failure after {iterations} iterations: {message}")]
    Numeric { message: String, iterations: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("record `{record}`: {source}")]
    InRecord {
        record: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used by the command-line driver to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn format(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_record(record: impl Into<String>, source: Error) -> Self {
        Error::InRecord {
            record: record.into(),
            source: Box::new(source),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Argument(_) => ErrorClass::Usage,
            Error::Numeric { .. } => ErrorClass::Numeric,
            Error::InRecord { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
