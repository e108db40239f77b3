//! Transformer encoder, extraction heads and training loop.
//!
//! Everything runs on `f64` arrays on the CPU. The encoder is a small
//! bidirectional transformer trained from scratch, or BERT weights loaded
//! from a safetensors file.

use std::path::{Path, PathBuf};

pub mod autodiff;
pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod heads;
pub mod nms;
pub mod optim;
pub mod pretrained;
pub mod tokenizer;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use encoder::{Encoder, EncoderConfig};
pub use heads::{ModelKind, SpanPrediction};
pub use nms::nms_decode;
pub use tokenizer::{WordPiece, WordPieceConfig};
pub use trainer::{train, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("checkpoint: {0}")]
    Safetensors(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Core(#[from] factorspan_core::Error),
    #[error("non-finite loss {loss} at step {step}; batch written to {dump}")]
    NonFinite { step: usize, loss: f64, dump: String },
}

impl ModelError {
    pub fn io_at(path: &Path, source: std::io::Error) -> ModelError {
        ModelError::Io { path: path.to_path_buf(), source }
    }
}

impl From<safetensors::SafeTensorError> for ModelError {
    fn from(e: safetensors::SafeTensorError) -> Self {
        ModelError::Safetensors(e.to_string())
    }
}
