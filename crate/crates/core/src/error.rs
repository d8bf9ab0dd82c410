use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("failed to decode video {video_id}: {message}")]
    Decode { video_id: String, message: String },

    #[error("shape mismatch in {context}: expected {expected:?}, received {received:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        received: Vec<usize>,
    },

    #[error("model spec error: {0}")]
    Spec(String),

    #[error(
        "pretrained weights missing at {path}; export them with scripts/export_keras_backbone.py \
         or enable the random-init fallback"
    )]
    WeightsMissing { path: PathBuf },

    #[error("weights file {path} is incompatible: {message}")]
    WeightsIncompatible { path: PathBuf, message: String },

    #[error("dataset size error: {0}")]
    Size(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss} (try a smaller learning rate or batch size {batch_size_hint})")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
        batch_size_hint: usize,
    },

    #[error(
        "not enough memory: a batch needs about {required_mib} MiB of activations but {available_mib} MiB are \
         available (try batch size {batch_size_hint})"
    )]
    Memory {
        required_mib: u64,
        available_mib: u64,
        batch_size_hint: usize,
    },

    #[error("incomplete experiment grid: missing {0}")]
    IncompleteGrid(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], received: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            received: received.to_vec(),
        }
    }

    pub(crate) fn decode(video_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Decode {
            video_id: video_id.into(),
            message: message.into(),
        }
    }
}

/// Attach a path to a raw `std::io::Error`.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::result::Result<T, std::io::Error> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
