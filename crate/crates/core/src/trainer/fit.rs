use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint, RngState};
use super::data::{sample_batch, validation_chunks, Batch, TrainData};
use super::{deep_loss, Adam, LossSpec, TrainError};
use crate::diff::{Graph, NormMode, Tensor};
use crate::fsio::write_atomic;
use crate::model::{Model, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub chunk_len: usize,
    /// Epochs without strict validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            chunk_len: 16384,
            patience: 20,
            max_epochs: 500,
            steps_per_epoch: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with batch size 8 for the Conv-TasNet baseline.
    pub fn for_model(model: &ModelConfig) -> Self {
        let mut c = Self::default();
        if matches!(model, ModelConfig::ConvTasNet { .. }) {
            c.batch_size = 8;
        }
        c
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ints = [
            ("batch_size", self.batch_size),
            ("chunk_len", self.chunk_len),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("steps_per_epoch", self.steps_per_epoch),
        ];
        if let Some((name, _)) = ints.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

/// Output locations of a training run.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn history(&self) -> PathBuf {
        self.dir.join("history.csv")
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Snapshot taken after the epoch with the lowest validation loss.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub stopped_early: bool,
}

/// One optimizer step on a batch; returns the loss before the update.
pub fn train_step(model: &mut Model<f32>, adam: &mut Adam<f32>, batch: &Batch, loss: &LossSpec) -> Result<f64, TrainError> {
    let mut g = Graph::new();
    let x = g.input(batch.mixture.clone());
    let y = g.input(batch.vocals.clone());
    let out = model.forward(&mut g, x, NormMode::Train)?;
    let l = deep_loss(&mut g, y, out.final_est, out.mid, loss)?;
    let value = g.value(l).data()[0] as f64;
    g.backward(l)?;
    model.store.zero_grads();
    g.accumulate_param_grads(&mut model.store);
    adam.step(&mut model.store)?;
    Ok(value)
}

/// Mean eval-mode loss over fixed chunks, in batches of `batch_size`.
pub fn validation_loss(
    model: &mut Model<f32>,
    chunks: &[(Vec<f32>, Vec<f32>)],
    batch_size: usize,
    loss: &LossSpec,
) -> Result<f64, TrainError> {
    if chunks.is_empty() {
        return Err(TrainError::Config("no validation chunks".into()));
    }
    let mut total = 0.0;
    for group in chunks.chunks(batch_size.max(1)) {
        let l = group[0].0.len();
        let b = group.len();
        let mix: Vec<f32> = group.iter().flat_map(|c| c.0.iter().copied()).collect();
        let voc: Vec<f32> = group.iter().flat_map(|c| c.1.iter().copied()).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![b, 1, l], mix)?);
        let y = g.input(Tensor::new(vec![b, 1, l], voc)?);
        let out = model.forward(&mut g, x, NormMode::Eval)?;
        let v = deep_loss(&mut g, y, out.final_est, out.mid, loss)?;
        total += g.value(v).data()[0] as f64 * b as f64;
    }
    Ok(total / chunks.len() as f64)
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r).map_err(|e| TrainError::Config(format!("history: {e}")))?;
    }
    if history.is_empty() {
        w.write_record(["epoch", "train_loss", "valid_loss"])
            .map_err(|e| TrainError::Config(format!("history: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| TrainError::Config(format!("history: {e}")))?;
    write_atomic(path, &bytes).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs epochs of `steps_per_epoch` steps from `start` until `max_epochs`
/// or until `patience` epochs pass without a strictly lower validation
/// loss. `start` must carry optimizer and trainer state (see
/// [`Checkpoint::fresh`]); a checkpoint written by a previous run resumes
/// it exactly. With `files`, `history.csv`, `last.ckpt` and `best.ckpt` are
/// rewritten after every epoch.
pub fn fit(
    start: Checkpoint,
    train: &TrainData,
    valid: &TrainData,
    files: Option<&RunFiles>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome, TrainError> {
    let Checkpoint {
        mut model,
        adam,
        mut history,
        trainer,
    } = start;
    let mut state = trainer.ok_or_else(|| TrainError::Config("checkpoint has no trainer state".into()))?;
    let mut adam = adam.ok_or_else(|| TrainError::Config("checkpoint has no optimizer state".into()))?;
    let cfg = state.config.clone();
    cfg.validate()?;
    state.loss.check_model(&model.config)?;
    model.config.check_input_len(cfg.chunk_len)?;
    let chunks = validation_chunks(valid, cfg.chunk_len);
    if chunks.is_empty() {
        return Err(TrainError::Config("validation split is empty".into()));
    }
    let mut rng = state.rng.restore().map_err(TrainError::Config)?;
    let snapshot = |model: &Model<f32>, adam: &Adam<f32>, history: &[EpochRecord], state: &super::TrainerState| Checkpoint {
        model: model.clone(),
        adam: Some(adam.clone()),
        history: history.to_vec(),
        trainer: Some(state.clone()),
    };
    let mut best: Option<Checkpoint> = None;

    while state.epoch < cfg.max_epochs && state.since_best < cfg.patience {
        let epoch = state.epoch + 1;
        let mut sum = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let batch = sample_batch(train, &cfg, &mut rng)?;
            let l = train_step(&mut model, &mut adam, &batch, &state.loss)?;
            if !l.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            sum += l;
        }
        let valid_loss = validation_loss(&mut model, &chunks, cfg.batch_size, &state.loss)?;
        if !valid_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                step: cfg.steps_per_epoch,
            });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: sum / cfg.steps_per_epoch as f64,
            valid_loss,
        };
        history.push(rec);
        let improved = state.best_valid.is_none_or(|b| valid_loss < b);
        if improved {
            state.best_valid = Some(valid_loss);
            state.since_best = 0;
        } else {
            state.since_best += 1;
        }
        state.epoch = epoch;
        state.rng = RngState::capture(&rng);
        let last = snapshot(&model, &adam, &history, &state);
        if improved {
            best = Some(last.clone());
        }
        if let Some(f) = files {
            write_history_csv(&f.history(), &history)?;
            save_checkpoint(&last, f.last())?;
            if improved {
                save_checkpoint(&last, f.best())?;
            }
        }
        on_epoch(&rec);
    }
    let last = snapshot(&model, &adam, &history, &state);
    let best = match best {
        Some(b) => b,
        None => match files.map(|f| f.best()).filter(|p| p.exists()) {
            Some(p) => super::load_checkpoint(p, Some(&model.config))?,
            None => last.clone(),
        },
    };
    Ok(FitOutcome {
        stopped_early: state.since_best >= cfg.patience,
        best,
        last,
    })
}
