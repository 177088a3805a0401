use std::path::PathBuf;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    #[error("non-finite loss at step {step} (epoch {epoch}, case {case}): {diagnostic}")]
    NonFiniteLoss {
        step: usize,
        epoch: usize,
        case: String,
        diagnostic: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint does not match its model config: {0}")]
    CheckpointMismatch(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// True for errors caused by the numeric state of a computation rather
    /// than by bad input data or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NonFiniteLoss { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
