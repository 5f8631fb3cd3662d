use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("decoder cache full: capacity {capacity}, cannot append position {position}")]
    CacheRollover { capacity: usize, position: usize },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("world generation failed after {attempts} attempts (seed {seed})")]
    Generation { seed: u64, attempts: usize },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("strategies disagree: {0}")]
    Equivalence(String),
    #[error("format error in {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("version mismatch: file has {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}
