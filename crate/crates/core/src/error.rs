use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, unknown names, or invalid settings.
    #[error("configuration error: {0}")]
    Config(String),
    /// Invalid values handed to an operation (labels, p-values, degenerate vectors).
    #[error("input error: {0}")]
    Input(String),
    /// Malformed file contents.
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },
    /// Training or inference produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            msg: msg.into(),
        }
    }

    /// Configuration problems map to 2, everything data-related to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
