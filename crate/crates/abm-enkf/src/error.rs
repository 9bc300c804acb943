use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an API contract (bad status, infeasible target, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input file failed schema validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// A row of an input file could not be parsed.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Linear algebra broke down (should not happen with positive-definite R).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// I/O failure with path context.
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
}

pub type Result<T> = std::result::Result<T, Error>;
