use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Row-level CSV problem. `row` is 1-based and counts the header as row 1.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("normalization fit failed: {0}")]
    Fit(String),

    #[error("every feature was dropped (threshold {threshold})")]
    EmptyFeatures { threshold: f64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("archive checksum mismatch: {0}")]
    Checksum(String),

    #[error("unsupported archive format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("archive structure error: {0}")]
    Structure(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
