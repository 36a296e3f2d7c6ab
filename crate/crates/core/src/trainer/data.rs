use rand::Rng;

use super::{TrainConfig, TrainError};
use crate::audio::{load_pair, to_working_format, DatasetIndex};
use crate::diff::Tensor;

/// Mono mixture and vocals at the working rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Song {
    pub id: String,
    pub mixture: Vec<f32>,
    pub vocals: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainData {
    pub songs: Vec<Song>,
}

impl TrainData {
    /// Loads every song of a split, converted to mono at `working_rate`.
    pub fn load(index: &DatasetIndex, working_rate: u32) -> Result<Self, TrainError> {
        let songs = index
            .entries
            .iter()
            .map(|e| {
                let (mix, voc) = load_pair(e)?;
                Ok(Song {
                    id: e.song_id.clone(),
                    mixture: to_working_format(&mix, working_rate)?.samples,
                    vocals: to_working_format(&voc, working_rate)?.samples,
                })
            })
            .collect::<Result<_, TrainError>>()?;
        Ok(Self { songs })
    }

    pub fn is_empty(&self) -> bool {
        self.songs.is_empty()
    }
}

/// `[batch, 1, chunk_len]` mixture and vocal crops.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub mixture: Tensor<f32>,
    pub vocals: Tensor<f32>,
    /// `(song index, crop offset)` per item.
    pub crops: Vec<(usize, usize)>,
    /// Items taken from songs shorter than the chunk and zero-padded.
    pub padded: Vec<bool>,
}

fn crop(x: &[f32], offset: usize, len: usize) -> Vec<f32> {
    let end = (offset + len).min(x.len());
    let mut c = x[offset.min(end)..end].to_vec();
    c.resize(len, 0.0);
    c
}

/// Uniform song, then uniform crop offset; mixture and vocals share it.
pub fn sample_batch<R: Rng + ?Sized>(data: &TrainData, cfg: &TrainConfig, rng: &mut R) -> Result<Batch, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Config("no training songs".into()));
    }
    let (b, l) = (cfg.batch_size, cfg.chunk_len);
    let mut mix = Vec::with_capacity(b * l);
    let mut voc = Vec::with_capacity(b * l);
    let mut crops = Vec::with_capacity(b);
    let mut padded = Vec::with_capacity(b);
    for _ in 0..b {
        let s = rng.gen_range(0..data.songs.len());
        let song = &data.songs[s];
        let n = song.mixture.len();
        let offset = if n > l { rng.gen_range(0..=n - l) } else { 0 };
        mix.extend(crop(&song.mixture, offset, l));
        voc.extend(crop(&song.vocals, offset, l));
        crops.push((s, offset));
        padded.push(n < l);
    }
    Ok(Batch {
        mixture: Tensor::new(vec![b, 1, l], mix)?,
        vocals: Tensor::new(vec![b, 1, l], voc)?,
        crops,
        padded,
    })
}

/// Non-overlapping tiling from the start of each song; a song shorter than
/// one chunk contributes a single zero-padded chunk.
pub fn validation_chunks(data: &TrainData, chunk_len: usize) -> Vec<(Vec<f32>, Vec<f32>)> {
    let mut out = Vec::new();
    for song in &data.songs {
        let n = song.mixture.len();
        let count = if n < chunk_len { 1 } else { n / chunk_len };
        for k in 0..count {
            out.push((crop(&song.mixture, k * chunk_len, chunk_len), crop(&song.vocals, k * chunk_len, chunk_len)));
        }
    }
    out
}
