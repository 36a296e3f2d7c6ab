use serde::{Deserialize, Serialize};

use super::bss::bss_eval;
use super::MetricsError;

/// Evaluation protocol knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub seg_len_secs: f64,
    pub filter_len: usize,
    pub pes_frame: usize,
    pub pes_floor_db: f64,
    pub vad_frame_ms: f64,
    pub vad_threshold_db: f64,
    /// Segments whose reference mean-square energy is below this are silent.
    pub silent_threshold_db: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            seg_len_secs: 1.0,
            filter_len: 512,
            pes_frame: 4096,
            pes_floor_db: -100.0,
            vad_frame_ms: 20.0,
            vad_threshold_db: -60.0,
            silent_threshold_db: -100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentScores {
    pub song_id: String,
    pub segment_index: usize,
    /// `None` for silent-reference segments.
    pub sdr: Option<f64>,
    pub sir: Option<f64>,
    pub sar: Option<f64>,
    /// PES values of the silent 4096-sample frames starting in this segment.
    pub pes_frames: Vec<f64>,
    /// Per 20-ms frame: estimate and reference VAD labels agree.
    pub vad_hits: Vec<bool>,
    pub vad_correct: f64,
    /// Fraction of this segment's 20-ms frames where the reference VAD is active.
    pub ref_active: f64,
    pub is_silent: bool,
}

impl SegmentScores {
    /// Reference vocals inactive in most VAD frames; the silent population
    /// of the KDE split.
    pub fn vad_silent(&self) -> bool {
        self.ref_active < 0.5
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PesResult {
    /// `None` when no frame is silent.
    pub mean_db: Option<f64>,
    /// `(frame index, dB)` for every silent frame.
    pub frames: Vec<(usize, f64)>,
}

/// Mean square in dB, `-inf` for an all-zero slice.
fn mean_square_db(x: &[f64]) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    10.0 * ms.log10()
}

/// Predicted energy at silence over full `frame_len` frames.
///
/// A frame is silent when the reference mean-square energy is below `floor`
/// dB; it contributes `max(10 log10(max(mean(est^2), 1e-12)), floor)`.
pub fn pes(estimate: &[f64], ref_vocals: &[f64], frame_len: usize, floor: f64) -> Result<PesResult, MetricsError> {
    if estimate.len() != ref_vocals.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "estimate {}, reference {}",
            estimate.len(),
            ref_vocals.len()
        )));
    }
    if frame_len == 0 {
        return Err(MetricsError::InvalidArgument("PES frame length must be positive".into()));
    }
    let mut frames = Vec::new();
    for (k, (e, r)) in estimate.chunks_exact(frame_len).zip(ref_vocals.chunks_exact(frame_len)).enumerate() {
        if mean_square_db(r) < floor {
            let ms = e.iter().map(|v| v * v).sum::<f64>() / frame_len as f64;
            frames.push((k, (10.0 * ms.max(1e-12).log10()).max(floor)));
        }
    }
    let mean_db = (!frames.is_empty()).then(|| frames.iter().map(|f| f.1).sum::<f64>() / frames.len() as f64);
    Ok(PesResult { mean_db, frames })
}

fn vad_frame_len(sample_rate: u32, frame_ms: f64) -> usize {
    (sample_rate as f64 * frame_ms / 1000.0).round() as usize
}

/// Energy VAD over full frames: active iff RMS in dBFS `>= threshold_db`.
pub fn vad_labels(signal: &[f64], sample_rate: u32, frame_ms: f64, threshold_db: f64) -> Vec<bool> {
    let n = vad_frame_len(sample_rate, frame_ms).max(1);
    signal
        .chunks_exact(n)
        .map(|f| {
            let rms = (f.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            20.0 * rms.log10() >= threshold_db
        })
        .collect()
}

/// Percentage of frames whose labels agree.
pub fn vad_accuracy(est: &[bool], reference: &[bool]) -> Result<f64, MetricsError> {
    if est.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} vs {} VAD frames",
            est.len(),
            reference.len()
        )));
    }
    if est.is_empty() {
        return Err(MetricsError::InvalidArgument("no VAD frames".into()));
    }
    let hits = est.iter().zip(reference).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / est.len() as f64)
}

/// Scores every full, non-overlapping segment of a song; the tail shorter
/// than one segment is dropped. PES and VAD frames are laid out over the
/// whole song and attributed to the segment they start in.
pub fn segment_metrics(
    song_id: &str,
    vocals: &[f64],
    accomp: &[f64],
    estimate: &[f64],
    sample_rate: u32,
    params: &EvalParams,
) -> Result<Vec<SegmentScores>, MetricsError> {
    let t = vocals.len();
    if accomp.len() != t || estimate.len() != t {
        return Err(MetricsError::LengthMismatch(format!(
            "song {song_id}: vocals {t}, accompaniment {}, estimate {}",
            accomp.len(),
            estimate.len()
        )));
    }
    let seg = (params.seg_len_secs * sample_rate as f64).round() as usize;
    if seg == 0 || t < seg {
        return Err(MetricsError::InvalidArgument(format!(
            "song {song_id}: {t} samples is shorter than one {seg}-sample segment"
        )));
    }
    if vocals.iter().chain(accomp).chain(estimate).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n_seg = t / seg;
    let filter_len = params.filter_len.min(seg);

    let pes_all = pes(estimate, vocals, params.pes_frame, params.pes_floor_db)?;
    let vad_est = vad_labels(estimate, sample_rate, params.vad_frame_ms, params.vad_threshold_db);
    let vad_ref = vad_labels(vocals, sample_rate, params.vad_frame_ms, params.vad_threshold_db);
    let vad_len = vad_frame_len(sample_rate, params.vad_frame_ms).max(1);

    let mut out = Vec::with_capacity(n_seg);
    for s in 0..n_seg {
        let r = s * seg..(s + 1) * seg;
        let is_silent = mean_square_db(&vocals[r.clone()]) < params.silent_threshold_db;
        let scores = if is_silent {
            None
        } else {
            match bss_eval(&vocals[r.clone()], &accomp[r.clone()], &estimate[r.clone()], filter_len) {
                Ok(sc) => Some(sc),
                Err(MetricsError::SilentReference) => None,
                Err(e) => return Err(e),
            }
        };
        let pes_frames = pes_all
            .frames
            .iter()
            .filter(|(k, _)| r.contains(&(k * params.pes_frame)))
            .map(|f| f.1)
            .collect();
        let frames: Vec<usize> = (0..vad_est.len()).filter(|k| r.contains(&(k * vad_len))).collect();
        let vad_hits: Vec<bool> = frames.iter().map(|&k| vad_est[k] == vad_ref[k]).collect();
        let fraction = |n: usize| if frames.is_empty() { 0.0 } else { n as f64 / frames.len() as f64 };
        let vad_correct = fraction(vad_hits.iter().filter(|&&h| h).count());
        let ref_active = fraction(frames.iter().filter(|&&k| vad_ref[k]).count());
        out.push(SegmentScores {
            song_id: song_id.to_string(),
            segment_index: s,
            sdr: scores.map(|x| x.sdr),
            sir: scores.map(|x| x.sir),
            sar: scores.map(|x| x.sar),
            pes_frames,
            vad_hits,
            vad_correct,
            ref_active,
            is_silent: is_silent || scores.is_none(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pes_examples() {
        let r = vec![0.0; 8192];
        let z = pes(&vec![0.0; 8192], &r, 4096, -100.0).unwrap();
        assert_eq!(z.mean_db, Some(-100.0));
        let one = pes(&vec![1.0; 4096], &r[..4096], 4096, -100.0).unwrap();
        assert_eq!(one.mean_db, Some(0.0));
        let mut half = vec![0.0; 4096];
        half.extend(vec![1.0; 4096]);
        assert_eq!(pes(&half, &r, 4096, -100.0).unwrap().mean_db, Some(-50.0));
        let loud = vec![0.5; 4096];
        assert_eq!(pes(&loud, &loud, 4096, -100.0).unwrap().mean_db, None);
    }

    #[test]
    fn vad_examples() {
        assert_eq!(vad_labels(&[0.0; 441], 22050, 20.0, -60.0), vec![false]);
        assert_eq!(vad_labels(&[1.0; 441], 22050, 20.0, -60.0), vec![true]);
        let a = 10f64.powf(-50.0 / 20.0);
        let s: Vec<f64> = (0..441).map(|i| a * (i as f64 * 0.3).sin()).collect();
        assert_eq!(vad_labels(&s, 22050, 20.0, -60.0), vec![true]);
        assert_eq!(vad_accuracy(&[true, false], &[true, false]).unwrap(), 100.0);
        assert_eq!(vad_accuracy(&[true, false], &[false, true]).unwrap(), 0.0);
        assert_eq!(vad_accuracy(&[true, true, true, true], &[true, true, true, false]).unwrap(), 75.0);
        assert!(vad_accuracy(&[true], &[]).is_err());
    }

    #[test]
    fn segments_drop_tail_and_mark_silence() {
        let sr = 100;
        let v: Vec<f64> = (0..350).map(|i| if i < 100 { 0.0 } else { (i as f64 * 0.37).sin() }).collect();
        let a: Vec<f64> = (0..350).map(|i| (i as f64 * 0.11).cos()).collect();
        let e: Vec<f64> = v.iter().zip(&a).map(|(x, y)| x + 0.1 * y).collect();
        let p = EvalParams {
            filter_len: 4,
            pes_frame: 50,
            vad_frame_ms: 100.0,
            ..EvalParams::default()
        };
        let s = segment_metrics("x", &v, &a, &e, sr, &p).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s[0].is_silent && s[0].sdr.is_none());
        assert_eq!(s[0].pes_frames.len(), 2);
        assert!(!s[1].is_silent);
        assert_eq!(s[1].vad_hits.len(), 10);
        let direct = bss_eval(&v[200..300], &a[200..300], &e[200..300], 4).unwrap();
        assert_eq!(s[2].sdr, Some(direct.sdr));
        assert!(segment_metrics("x", &v[..99], &a[..99], &e[..99], sr, &p).is_err());
    }
}
