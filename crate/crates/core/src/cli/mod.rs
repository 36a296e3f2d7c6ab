//! `htmd` command line: train, separate, evaluate, significance, export-kde.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric fault.

mod config;
mod evaluate;
mod separate;
mod tables;
mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::audio::AudioError;
use crate::diff::DiffError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::separate::SeparateError;
use crate::trainer::TrainError;

pub use config::{RunConfig, CONFIG_FILE};
pub use separate::intermediate_path;
pub use train::resolve as resolve_train;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::NonFinite => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DiffError> for CliError {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Shape(_) => CliError::Usage(e.to_string()),
            ModelError::Diff(d) => d.into(),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NonFinite => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Diff(d) => d.into(),
            TrainError::Audio(a) => a.into(),
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SeparateError> for CliError {
    fn from(e: SeparateError) -> Self {
        match e {
            SeparateError::Audio(a) => a.into(),
            SeparateError::Model(m) => m.into(),
            SeparateError::NonFinite => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "htmd", version, about = "Singing-voice separation: training, inference and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model with early stopping on validation loss.
    Train(TrainArgs),
    /// Separate the vocals of one WAV file with a trained checkpoint.
    Separate(SeparateArgs),
    /// Score estimated vocals against references over 1-s segments.
    Evaluate(EvalArgs),
    /// Paired significance tests between two evaluations of the same songs.
    Significance(SignificanceArgs),
    /// Kernel density estimate of segment SDR from a segments table.
    ExportKde(KdeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root containing `train/<song>/{mixture,vocals}.wav`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model preset: htmd, convtasnet or waveunet.
    #[arg(long)]
    pub preset: Option<String>,
    /// Loss preset: mse-mse, mae-mae, mae-mse, mse-mae, mse or mae.
    #[arg(long)]
    pub loss: Option<String>,
    /// Loss on the final estimate (mse|mae); overrides the preset.
    #[arg(long)]
    pub loss_final: Option<String>,
    /// Loss on the intermediate estimate (mse|mae|none); overrides the preset.
    #[arg(long)]
    pub loss_mid: Option<String>,
    /// Weight of the final-estimate loss.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the intermediate-estimate loss.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Defaults to 16, or 8 for convtasnet.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training crop length in samples.
    #[arg(long)]
    pub chunk_len: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training songs held out for validation (default: a quarter).
    #[arg(long)]
    pub valid_songs: Option<usize>,
    /// Run directory for checkpoints, history and the expanded config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output WAV for the vocal estimate.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the masker estimate next to the output (`<stem>.intermediate.wav`).
    #[arg(long)]
    pub emit_intermediate: bool,
    /// Downsample inputs at twice the working rate instead of rejecting them.
    #[arg(long)]
    pub resample: bool,
    /// Inference chunk length; defaults to the training crop length.
    #[arg(long)]
    pub chunk_len: Option<usize>,
    /// Chunks per forward pass.
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 22050)]
    pub sample_rate: u32,
    /// Write 16-bit PCM instead of 32-bit float.
    #[arg(long)]
    pub pcm16: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of `<song>.wav` or `<song>/vocals.wav` estimates.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// Directory of `<song>/{mixture,vocals}.wav` references.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Distortion filter length in taps.
    #[arg(long)]
    pub filter_len: Option<usize>,
    /// Segment length in seconds.
    #[arg(long)]
    pub seg_len: Option<f64>,
    /// Silence threshold and floor of the predicted energy at silence, dB.
    #[arg(long, allow_hyphen_values = true)]
    pub pes_floor: Option<f64>,
    /// VAD activity threshold, dBFS.
    #[arg(long, allow_hyphen_values = true)]
    pub vad_threshold: Option<f64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// KDE grid points.
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct SignificanceArgs {
    /// Segments table of the first system.
    pub a: PathBuf,
    /// Segments table of the second system.
    pub b: PathBuf,
    /// Significance level.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Write the results as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KdeArgs {
    /// Segments table written by `evaluate`.
    pub segments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    /// Fixed bandwidth in dB; Scott's rule when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => train::run(a),
        Command::Separate(a) => separate::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Significance(a) => tables::significance(a),
        Command::ExportKde(a) => tables::export_kde(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
