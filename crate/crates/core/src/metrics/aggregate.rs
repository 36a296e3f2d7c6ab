use serde::{Deserialize, Serialize};

use super::segments::SegmentScores;
use super::MetricsError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Triple<T> {
    pub sdr: T,
    pub sir: T,
    pub sar: T,
}

impl<T> Triple<T> {
    fn from_fn(mut f: impl FnMut(fn(&SegmentScores) -> Option<f64>) -> T) -> Self {
        Self {
            sdr: f(|s| s.sdr),
            sir: f(|s| s.sir),
            sar: f(|s| s.sar),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Median over each song's defined segments, then median across songs.
    pub song_median: Triple<f64>,
    pub segment_median: Triple<f64>,
    /// `None` when every defined value is `+inf`.
    pub segment_mean: Triple<Option<f64>>,
    /// Number of `+inf` values among defined segments.
    pub inf_count: Triple<usize>,
    /// Mean over all silent PES frames; `None` if there are none.
    pub pes_mean: Option<f64>,
    pub pes_frames: usize,
    pub vad_percent: Option<f64>,
    pub n_songs: usize,
    pub n_segments: usize,
    pub n_silent: usize,
    #[serde(skip)]
    pub segments: Vec<SegmentScores>,
}

/// Median with `+inf` ordered last; `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else if v[n / 2 - 1] == v[n / 2] {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn mean_finite(values: &[f64]) -> Option<f64> {
    let kept: Vec<f64> = values.iter().copied().filter(|v| *v != f64::INFINITY).collect();
    (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Songs keep the order of their first appearance.
pub fn aggregate(per_segment: &[SegmentScores]) -> Result<MetricReport, MetricsError> {
    if per_segment.is_empty() {
        return Err(MetricsError::InvalidArgument("no segments".into()));
    }
    let defined: Vec<&SegmentScores> = per_segment.iter().filter(|s| s.sdr.is_some()).collect();
    if defined.is_empty() {
        return Err(MetricsError::NothingDefined);
    }
    let mut songs: Vec<&str> = Vec::new();
    for s in per_segment {
        if !songs.contains(&s.song_id.as_str()) {
            songs.push(&s.song_id);
        }
    }
    let pooled = |get: fn(&SegmentScores) -> Option<f64>| -> Vec<f64> { defined.iter().filter_map(|s| get(s)).collect() };

    let song_median = Triple::from_fn(|get| {
        let per_song: Vec<f64> = songs
            .iter()
            .filter_map(|id| {
                let vals: Vec<f64> = defined.iter().filter(|s| s.song_id == *id).filter_map(|s| get(s)).collect();
                median(&vals)
            })
            .collect();
        median(&per_song).expect("at least one defined segment")
    });
    let segment_median = Triple::from_fn(|get| median(&pooled(get)).expect("at least one defined segment"));
    let segment_mean = Triple::from_fn(|get| mean_finite(&pooled(get)));
    let inf_count = Triple::from_fn(|get| pooled(get).iter().filter(|v| **v == f64::INFINITY).count());

    let pes: Vec<f64> = per_segment.iter().flat_map(|s| s.pes_frames.iter().copied()).collect();
    let vad_total: usize = per_segment.iter().map(|s| s.vad_hits.len()).sum();
    let vad_hits: usize = per_segment.iter().map(|s| s.vad_hits.iter().filter(|&&h| h).count()).sum();

    Ok(MetricReport {
        song_median,
        segment_median,
        segment_mean,
        inf_count,
        pes_mean: (!pes.is_empty()).then(|| pes.iter().sum::<f64>() / pes.len() as f64),
        pes_frames: pes.len(),
        vad_percent: (vad_total > 0).then(|| 100.0 * vad_hits as f64 / vad_total as f64),
        n_songs: songs.len(),
        n_segments: per_segment.len(),
        n_silent: per_segment.iter().filter(|s| s.is_silent).count(),
        segments: per_segment.to_vec(),
    })
}
