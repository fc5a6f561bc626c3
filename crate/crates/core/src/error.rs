use std::path::PathBuf;

use thiserror::Error;

use crate::datasets::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a precondition of an operation (shape mismatch, bad label,
    /// illegal state transition, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("task {task} data has been released at the task boundary")]
    DataReleased { task: usize },

    #[error("corrupt or incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
