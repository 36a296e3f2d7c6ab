use serde::{Deserialize, Serialize};

use super::{AudioBuffer, AudioError};

/// Fixed-length framing with zero padding at the tail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunk_len: usize,
    pub hop: usize,
}

impl Default for ChunkPlan {
    fn default() -> Self {
        Self {
            chunk_len: 16384,
            hop: 16384,
        }
    }
}

impl ChunkPlan {
    pub fn new(chunk_len: usize, hop: usize) -> Result<Self, AudioError> {
        let p = Self { chunk_len, hop };
        p.validate()?;
        Ok(p)
    }

    /// 50% overlap.
    pub fn half_overlap(chunk_len: usize) -> Result<Self, AudioError> {
        Self::new(chunk_len, chunk_len / 2)
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        if self.hop == 0 || self.hop > self.chunk_len {
            return Err(AudioError::InvalidArgument(format!(
                "chunk plan needs 0 < hop ({}) <= chunk_len ({})",
                self.hop, self.chunk_len
            )));
        }
        Ok(())
    }

    /// `ceil(len / hop)`.
    pub fn count(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// Synthesis weight at offset `i` of a chunk: 1 without overlap,
    /// otherwise a strictly positive triangle.
    fn weight(&self, i: usize) -> f64 {
        if self.hop == self.chunk_len {
            1.0
        } else {
            let l = self.chunk_len as f64;
            1.0 - (2.0 * i as f64 + 1.0 - l).abs() / l
        }
    }
}

/// Splits a mono buffer into `ceil(len / hop)` chunks starting at multiples
/// of `hop`; the final chunks are zero-padded.
pub fn chunk(buf: &AudioBuffer, plan: ChunkPlan) -> Result<Vec<Vec<f32>>, AudioError> {
    plan.validate()?;
    if buf.channels != 1 {
        return Err(AudioError::InvalidArgument("chunking expects a mono buffer".into()));
    }
    let x = &buf.samples;
    if x.is_empty() {
        return Err(AudioError::InvalidArgument("cannot chunk an empty buffer".into()));
    }
    Ok((0..plan.count(x.len()))
        .map(|k| {
            let start = k * plan.hop;
            let end = (start + plan.chunk_len).min(x.len());
            let mut c = x[start..end].to_vec();
            c.resize(plan.chunk_len, 0.0);
            c
        })
        .collect())
}

/// Inverse of [`chunk`]: triangular cross-fade normalized by the summed
/// weights (plain concatenation when `hop == chunk_len`), truncated to
/// `original_len`.
pub fn overlap_add(
    frames: &[Vec<f32>],
    plan: ChunkPlan,
    original_len: usize,
    sample_rate: u32,
) -> Result<AudioBuffer, AudioError> {
    plan.validate()?;
    if let Some(f) = frames.iter().find(|f| f.len() != plan.chunk_len) {
        return Err(AudioError::InvalidArgument(format!(
            "frame of length {} does not match chunk length {}",
            f.len(),
            plan.chunk_len
        )));
    }
    let span = frames.len().saturating_sub(1) * plan.hop + plan.chunk_len;
    if frames.is_empty() || original_len > span {
        return Err(AudioError::InvalidArgument(format!(
            "{} frames cannot cover {original_len} samples",
            frames.len()
        )));
    }
    let mut acc = vec![0.0f64; span];
    let mut wsum = vec![0.0f64; span];
    for (k, f) in frames.iter().enumerate() {
        let start = k * plan.hop;
        for (i, &v) in f.iter().enumerate() {
            let w = plan.weight(i);
            acc[start + i] += w * v as f64;
            wsum[start + i] += w;
        }
    }
    let samples = acc[..original_len]
        .iter()
        .zip(&wsum)
        .map(|(a, w)| (a / w) as f32)
        .collect();
    AudioBuffer::mono(samples, sample_rate)
}
