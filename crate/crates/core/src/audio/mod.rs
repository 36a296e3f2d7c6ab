//! WAV I/O, format conversion, dataset indexing and fixed-length chunking.

mod chunk;
mod dataset;
mod resample;
mod wav;

use std::path::PathBuf;

use thiserror::Error;

pub use chunk::{chunk, overlap_add, ChunkPlan};
pub use dataset::{index_dataset, load_pair, DatasetIndex, SongEntry, Split};
pub use resample::{resample_half, RESAMPLE_TAPS};
pub use wav::{load_wav, write_wav, SampleFormat};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("{path}: unsupported format: {detail}")]
    Unsupported { path: PathBuf, detail: String },
    #[error("{0}: data chunk is truncated")]
    Truncated(PathBuf),
    #[error("{path}: malformed wav: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("buffer contains non-finite samples")]
    NonFinite,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("song `{song}`: {detail}")]
    Dataset { song: String, detail: String },
}

/// Interleaved sampled audio. Frame `i` of channel `c` is
/// `samples[i * channels + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32, channels: u16) -> Result<Self, AudioError> {
        if sample_rate == 0 || channels == 0 {
            return Err(AudioError::InvalidArgument(
                "sample rate and channel count must be positive".into(),
            ));
        }
        if samples.len() % channels as usize != 0 {
            return Err(AudioError::InvalidArgument(format!(
                "{} samples do not divide into {channels} channels",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        Ok(Self {
            samples,
            sample_rate,
            channels,
        })
    }

    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(samples, sample_rate, 1)
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }
}

/// Per-frame mean of the channels.
pub fn to_mono(buf: &AudioBuffer) -> Result<AudioBuffer, AudioError> {
    match buf.channels {
        1 => Ok(buf.clone()),
        2 => Ok(AudioBuffer {
            samples: buf.samples.chunks_exact(2).map(|f| (f[0] + f[1]) * 0.5).collect(),
            sample_rate: buf.sample_rate,
            channels: 1,
        }),
        c => Err(AudioError::InvalidArgument(format!(
            "to_mono supports 1 or 2 channels, got {c}"
        ))),
    }
}

/// Mono buffer at `target_rate`, halving the rate when the input runs at
/// exactly twice the target.
pub fn to_working_format(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, AudioError> {
    let mono = to_mono(buf)?;
    if mono.sample_rate == target_rate {
        Ok(mono)
    } else if mono.sample_rate == 2 * target_rate {
        resample_half(&mono)
    } else {
        Err(AudioError::InvalidArgument(format!(
            "sample rate {} Hz cannot be converted to {target_rate} Hz",
            mono.sample_rate
        )))
    }
}
