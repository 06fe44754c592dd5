use std::path::PathBuf;

use crate::am::AmTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    /// A caller broke an API contract (missing layer, wrong seed shape, ...).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    #[error("no layer passed the gap threshold {threshold}; configure the alignment plan manually")]
    EmptyPlan { threshold: f64 },

    #[error("non-finite loss at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        trace: Box<AmTrace>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for failures caused by user-supplied data or settings rather
    /// than by a defect in the workbench itself.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Contract(_) | Error::NonFinite { .. })
    }
}
