//! Whole-signal inference: 50% overlapping chunks, batched forward passes,
//! triangular cross-fade back to the input length.

use thiserror::Error;

use crate::audio::{chunk, overlap_add, AudioBuffer, AudioError, ChunkPlan};
use crate::diff::Tensor;
use crate::model::{Model, ModelError};

#[derive(Debug, Error)]
pub enum SeparateError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model produced non-finite output")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Separation {
    pub vocals: AudioBuffer,
    /// Masker estimate of the composite model.
    pub intermediate: Option<AudioBuffer>,
}

/// Separates a mono buffer already at the model's working rate. Output
/// buffers have exactly as many samples as the input.
pub fn separate(
    model: &mut Model<f32>,
    input: &AudioBuffer,
    chunk_len: usize,
    batch: usize,
) -> Result<Separation, SeparateError> {
    if input.channels != 1 {
        return Err(AudioError::InvalidArgument("separation expects a mono buffer".into()).into());
    }
    model.config.check_input_len(chunk_len)?;
    let plan = ChunkPlan::half_overlap(chunk_len)?;
    let frames = chunk(input, plan)?;
    let mut fin = Vec::with_capacity(frames.len());
    let mut mid = Vec::with_capacity(frames.len());
    for group in frames.chunks(batch.max(1)) {
        let data: Vec<f32> = group.concat();
        let x = Tensor::new(vec![group.len(), 1, chunk_len], data).map_err(ModelError::from)?;
        let (f, m) = model.infer(x)?;
        if !f.all_finite() || m.as_ref().is_some_and(|m| !m.all_finite()) {
            return Err(SeparateError::NonFinite);
        }
        fin.extend(f.data().chunks_exact(chunk_len).map(<[f32]>::to_vec));
        if let Some(m) = m {
            mid.extend(m.data().chunks_exact(chunk_len).map(<[f32]>::to_vec));
        }
    }
    let n = input.frames();
    let vocals = overlap_add(&fin, plan, n, input.sample_rate)?;
    let intermediate = if mid.is_empty() {
        None
    } else {
        Some(overlap_add(&mid, plan, n, input.sample_rate)?)
    };
    Ok(Separation { vocals, intermediate })
}
