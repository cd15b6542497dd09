use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("no cassette entry for request {key} (tag `{tag}`)")]
    CassetteMiss { key: String, tag: String },

    #[error("render error: missing binding for slot `{0}`")]
    Render(String),

    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error("taxonomy construction failed: {0}")]
    Construction(String),

    #[error("taxonomy expansion failed: {0}")]
    Expansion(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("stage `{0}` has no committed output yet")]
    NotReady(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(message: impl Into<String>) -> Self {
        Error::Parse {
            line: None,
            message: message.into(),
        }
    }

    pub(crate) fn parse_at(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line: Some(line),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Config(_)
            | Error::Input(_)
            | Error::Render(_)
            | Error::NotReady(_) => 1,
            Error::Parse { .. }
            | Error::Construction(_)
            | Error::Expansion(_)
            | Error::Validation(_)
            | Error::Integrity(_) => 2,
            Error::Backend(_) | Error::CassetteMiss { .. } => 3,
        }
    }
}
