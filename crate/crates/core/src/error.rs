use std::path::PathBuf;

use thiserror::Error;

/// Coarse error classes surfaced by the command-line front end as exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on axis {axis}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        axis: usize,
        expected: usize,
        got: usize,
    },
    #[error("{op}: rank mismatch: expected {expected}, got {got}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { op: &'static str, axis: usize, rank: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("log of non-positive input at flat index {index} (value {value})")]
    NonPositiveLog { index: usize, value: f64 },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is detached from the tape")]
    DetachedLoss,
    #[error("variable belongs to a different tape")]
    ForeignVariable,
    #[error("backward already ran on this tape; call reset() before recording again")]
    BackwardTwice,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("value {value} out of range for {what}")]
    ValueOutOfRange { what: &'static str, value: i64 },
    #[error("model is uninitialized")]
    Uninitialized,
    #[error("incremental cache desynchronized: expected position {expected}, got {got}")]
    CacheDesync { expected: usize, got: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Uninitialized => ErrorCategory::Config,
            Error::Checkpoint(_) | Error::Image { .. } | Error::Io { .. } => ErrorCategory::Io,
            _ => ErrorCategory::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
