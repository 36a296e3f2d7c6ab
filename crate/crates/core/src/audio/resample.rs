use super::{AudioBuffer, AudioError};

/// Odd length keeps the filter zero-phase around its centre tap.
pub const RESAMPLE_TAPS: usize = 65;

/// Hann-windowed sinc low-pass with cutoff at a quarter of the input rate,
/// normalized to unit DC gain.
fn halfband_taps() -> Vec<f64> {
    let n = RESAMPLE_TAPS;
    let centre = (n - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - centre;
            let x = 0.5 * t;
            let sinc = if t == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64).cos();
            0.5 * sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Anti-alias low-pass then keep every other frame. Output frame `m` is
/// centred on input frame `2m`; edges see zero padding.
pub fn resample_half(buf: &AudioBuffer) -> Result<AudioBuffer, AudioError> {
    if buf.sample_rate % 2 != 0 {
        return Err(AudioError::InvalidArgument(format!(
            "cannot halve odd sample rate {}",
            buf.sample_rate
        )));
    }
    let frames = buf.frames();
    if frames < RESAMPLE_TAPS {
        return Err(AudioError::InvalidArgument(format!(
            "{frames} frames is shorter than the {RESAMPLE_TAPS}-tap filter"
        )));
    }
    let h = halfband_taps();
    let half = (RESAMPLE_TAPS / 2) as isize;
    let ch = buf.channels as usize;
    let out_frames = frames.div_ceil(2);
    let mut out = vec![0.0f32; out_frames * ch];
    for m in 0..out_frames {
        let centre = 2 * m as isize;
        for c in 0..ch {
            let mut acc = 0.0f64;
            for (k, &hk) in h.iter().enumerate() {
                let i = centre + k as isize - half;
                if (0..frames as isize).contains(&i) {
                    acc += hk * buf.samples[i as usize * ch + c] as f64;
                }
            }
            out[m * ch + c] = acc as f32;
        }
    }
    Ok(AudioBuffer {
        samples: out,
        sample_rate: buf.sample_rate / 2,
        channels: buf.channels,
    })
}
