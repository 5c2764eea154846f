use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("sequence cannot be sampled: {0}")]
    Unsampleable(String),

    #[error("target lost: {0}")]
    LostTarget(String),

    #[error("tracking failure at frame {frame_index}: {reason}")]
    TrackingFailure {
        frame_index: usize,
        reason: String,
        last_ltwh: [f64; 4],
    },

    #[error("non-finite loss at step {step} (batch: {provenance})")]
    NonFiniteLoss { step: usize, provenance: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
