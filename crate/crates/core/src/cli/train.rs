use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CliError, RunConfig, TrainArgs};
use crate::audio::index_dataset;
use crate::model::Model;
use crate::trainer::{fit, load_checkpoint, Checkpoint, LossKind, LossSpec, RunFiles, TrainData};

fn apply_flags(cfg: &mut RunConfig, a: &TrainArgs) -> Result<(), CliError> {
    if let Some(name) = &a.loss {
        cfg.loss = LossSpec::preset(name).ok_or_else(|| {
            CliError::Usage(format!("unknown loss preset `{name}` ({})", LossSpec::PRESETS.join(", ")))
        })?;
    }
    if let Some(k) = &a.loss_final {
        cfg.loss.final_kind = k.parse::<LossKind>()?;
    }
    if let Some(k) = &a.loss_mid {
        cfg.loss.mid_kind = match k.as_str() {
            "none" => None,
            k => Some(k.parse::<LossKind>()?),
        };
    }
    if let Some(v) = a.alpha {
        cfg.loss.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.loss.beta = v;
    }
    let t = &mut cfg.train;
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.chunk_len {
        t.chunk_len = v;
    }
    if let Some(v) = a.patience {
        t.patience = v;
    }
    if let Some(v) = a.max_epochs {
        t.max_epochs = v;
    }
    if let Some(v) = a.steps_per_epoch {
        t.steps_per_epoch = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    if a.valid_songs.is_some() {
        cfg.valid_songs = a.valid_songs;
    }
    if a.out.is_some() {
        cfg.output = a.out.clone();
    }
    if a.resume.is_some() {
        cfg.checkpoint = a.resume.clone();
    }
    Ok(())
}

/// Expanded and validated training config.
pub fn resolve(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::layered("train", a.config.as_deref(), a.preset.as_deref())?;
    apply_flags(&mut cfg, a)?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("missing dataset path: pass --data <root>".into()))?;
    if !data.is_dir() {
        return Err(CliError::Usage(format!("dataset root {} is not a directory", data.display())));
    }
    if cfg.output.is_none() {
        cfg.output = Some(PathBuf::from(format!("runs/{}-seed{}", cfg.model.name(), cfg.train.seed)));
    }
    cfg.loss.check_model(&cfg.model)?;
    cfg.train.validate()?;
    cfg.model.check_input_len(cfg.train.chunk_len)?;
    Ok(cfg)
}

fn starting_point(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let Some(path) = &cfg.checkpoint else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(1);
        let model = Model::new(cfg.model.clone(), &mut rng)?;
        return Ok(Checkpoint::fresh(model, cfg.train.clone(), cfg.loss));
    };
    let mut ckpt = load_checkpoint(path, Some(&cfg.model))?;
    let state = ckpt
        .trainer
        .as_mut()
        .ok_or_else(|| CliError::Data(format!("{} has no trainer state to resume", path.display())))?;
    let mut wanted = cfg.train.clone();
    wanted.max_epochs = state.config.max_epochs;
    wanted.patience = state.config.patience;
    if wanted != state.config || cfg.loss != state.loss {
        return Err(CliError::Usage(format!(
            "{}: training settings differ from the checkpoint; only max_epochs and patience may change on resume",
            path.display()
        )));
    }
    state.config.max_epochs = cfg.train.max_epochs;
    state.config.patience = cfg.train.patience;
    Ok(ckpt)
}

pub fn run(a: TrainArgs) -> Result<(), CliError> {
    let cfg = resolve(&a)?;
    let out = cfg.output.clone().expect("resolved");
    let data = cfg.data.clone().expect("resolved");
    cfg.echo(&out)?;

    let (train_idx, valid_idx, _) = index_dataset(&data, cfg.valid_songs)?;
    if train_idx.entries.is_empty() {
        return Err(CliError::Data(format!("{}: no training songs", data.display())));
    }
    if valid_idx.entries.is_empty() {
        return Err(CliError::Data("no validation songs; raise --valid-songs".into()));
    }
    let train = TrainData::load(&train_idx, cfg.sample_rate)?;
    let valid = TrainData::load(&valid_idx, cfg.sample_rate)?;
    eprintln!(
        "training {} on {} songs, validating on {}; run directory {}",
        cfg.model.name(),
        train.songs.len(),
        valid.songs.len(),
        out.display()
    );

    let files = RunFiles { dir: out.clone() };
    let outcome = fit(starting_point(&cfg)?, &train, &valid, Some(&files), |r| {
        eprintln!("epoch {:4}  train {:.6e}  valid {:.6e}", r.epoch, r.train_loss, r.valid_loss);
    })?;
    let best = outcome.best.trainer.as_ref().and_then(|t| t.best_valid);
    println!(
        "{} after {} epochs; best validation loss {}; checkpoint {}",
        if outcome.stopped_early { "stopped early" } else { "finished" },
        outcome.last.history.len(),
        best.map_or("n/a".into(), |b| format!("{b:.6e}")),
        files.best().display()
    );
    Ok(())
}
