use std::io;

use thiserror::Error;

/// Errors produced anywhere in the codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("coded stream truncated")]
    Truncated,

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("predictor error: {0}")]
    Predictor(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("weight checksum mismatch: bitstream expects {expected:#018x}, weights have {found:#018x}")]
    ChecksumMismatch { expected: u64, found: u64 },

    #[error("no feasible quantization parameters under the target rate")]
    Infeasible,

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad error category, used by the CLI for exit codes and by the C API for status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidInput,
    Format,
    Config,
    Corrupt,
    Infeasible,
    Io,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_) | Error::DegeneratePoint(_) => ErrorKind::InvalidInput,
            Error::Format(_) => ErrorKind::Format,
            Error::Config(_) => ErrorKind::Config,
            Error::Truncated | Error::Corrupt(_) | Error::ChecksumMismatch { .. } => {
                ErrorKind::Corrupt
            }
            Error::Infeasible => ErrorKind::Infeasible,
            Error::Io(_) => ErrorKind::Io,
            Error::Estimation(_) | Error::Predictor(_) | Error::Divergence(_) => {
                ErrorKind::Numeric
            }
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
