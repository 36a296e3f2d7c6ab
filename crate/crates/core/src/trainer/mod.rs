//! Deep-supervision losses, Adam, batch sampling, early-stopped training
//! and checkpoints.

mod adam;
mod checkpoint;
mod data;
mod fit;
mod loss;

use std::path::PathBuf;

use thiserror::Error;

use crate::audio::AudioError;
use crate::diff::DiffError;
use crate::model::ModelError;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, TrainerState, CHECKPOINT_VERSION};
pub use data::{sample_batch, validation_chunks, Batch, Song, TrainData};
pub use fit::{fit, train_step, validation_loss, write_history_csv, EpochRecord, FitOutcome, RunFiles, TrainConfig};
pub use loss::{deep_loss, loss_value, LossKind, LossSpec};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("non-finite gradient in `{param}` at optimizer step {step}")]
    NonFiniteGradient { param: String, step: u64 },
    #[error("{path}: corrupt checkpoint: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("{path}: checkpoint version {found} is not supported (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("config hash mismatch: expected {expected}, found {found}")]
    ConfigHash { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
