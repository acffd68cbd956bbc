use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("agent {agent}: invalid action {action}")]
    InvalidAction { agent: usize, action: usize },
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("unknown location {0}")]
    UnknownLocation(usize),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
