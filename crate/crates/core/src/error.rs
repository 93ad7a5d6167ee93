use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Unknown system, bad variant, or an invalid planner setting.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file did not match its schema. `field` is a dotted path into the document.
    #[error("{}: schema error at {field}{}: {message}", path.display(), line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Schema {
        path: PathBuf,
        field: String,
        line: Option<usize>,
        message: String,
    },

    #[error("invalid {what}: {message}")]
    Validation { what: &'static str, message: String },

    #[error("library format error: {0}")]
    Format(String),

    #[error("system mismatch: expected {expected}, found {found}")]
    SystemMismatch { expected: String, found: String },

    #[error("primitive generation failed: {0}")]
    Generation(String),

    #[error("{}: {source}", path.display())]
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

    pub(crate) fn validation(what: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            what,
            message: message.into(),
        }
    }
}
