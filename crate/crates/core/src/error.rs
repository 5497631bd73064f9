use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("autodiff error: {0}")]
    Autodiff(String),

    /// NaN or infinity detected in a forward pass or loss.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("format error in {path:?} at byte {offset}: {msg}")]
    Format {
        path: Option<PathBuf>,
        offset: u64,
        msg: String,
    },

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: Option<PathBuf>,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            offset,
            msg: msg.into(),
        }
    }

    /// Attach a path to format and i/o errors that were raised without one.
    pub fn with_path(self, p: impl Into<PathBuf>) -> Self {
        match self {
            Error::Format {
                path: None,
                offset,
                msg,
            } => Error::Format {
                path: Some(p.into()),
                offset,
                msg,
            },
            Error::Io { path: None, source } => Error::Io {
                path: Some(p.into()),
                source,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { path: None, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
