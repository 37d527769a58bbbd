use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its bytes do not match the expected layout.
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Input parsed but violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// Operation called outside its mathematical domain (empty input, single class).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    /// Training produced a non-finite loss; carries the ids of the offending batch.
    #[error("non-finite loss at iteration {iteration} (batch: {})", video_ids.join(","))]
    NonFinite {
        iteration: u64,
        video_ids: Vec<String>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad inputs or configuration rather than a failed run.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFinite { .. })
    }
}
