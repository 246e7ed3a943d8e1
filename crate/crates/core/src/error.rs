use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field query {distance:.3e} m from a dipole source")]
    DegenerateQuery { distance: f64 },

    #[error("query ({x:.4}, {y:.4}) lies outside the mapped region")]
    OutOfBounds { x: f64, y: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),

    #[error("kernel matrix factorization failed after jitter")]
    Factorization,

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("dimension mismatch: header declares {expected} values, payload holds {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("schema mismatch at record {record}: {message}")]
    Schema { record: usize, message: String },

    #[error("non-monotone timestamp: {next} does not follow {prev}")]
    NonMonotoneTimestamp { prev: f64, next: f64 },

    #[error("trajectory alignment failed: {0}")]
    Alignment(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than numeric or
    /// runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Malformed(_)
                | Error::DimensionMismatch { .. }
                | Error::Schema { .. }
                | Error::NonMonotoneTimestamp { .. }
                | Error::Empty(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::File { .. }
        )
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
