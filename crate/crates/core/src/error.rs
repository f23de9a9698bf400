use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Validation problems and I/O problems are kept
/// apart so the CLI can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} is not stochastic: sums to {sum} (tolerance {tolerance})")]
    NotStochastic {
        what: String,
        sum: f64,
        tolerance: f64,
    },

    #[error("{what} has entry {value} outside [0, 1]")]
    InvalidProbability { what: String, value: f64 },

    #[error("symbol {symbol} out of range for alphabet of size {n}")]
    SymbolOutOfRange { symbol: usize, n: usize },

    #[error("sequence has zero probability at position {position}")]
    ImpossibleSequence { position: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the environment (files, disk) rather than by
    /// the inputs themselves.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Csv(e) => e.is_io_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
