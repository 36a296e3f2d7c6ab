//! CSV and JSON outputs. Column layouts are versioned by [`SCHEMA_VERSION`]
//! and documented in `schemas/metrics.md` at the repository root.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::aggregate::MetricReport;
use super::kde::KdeTable;
use super::segments::SegmentScores;
use super::stats::{mcnemar, wilcoxon_signed_rank, SignificanceResult};
use super::MetricsError;
use crate::fsio::write_atomic;

pub const SCHEMA_VERSION: u32 = 1;

/// One row of `segments.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRow {
    pub song_id: String,
    pub segment: usize,
    pub sdr: Option<f64>,
    pub sir: Option<f64>,
    pub sar: Option<f64>,
    pub is_silent: bool,
    pub vad_correct: f64,
    pub pes: Option<f64>,
    pub vad_frames: usize,
    pub ref_active: f64,
}

impl SegmentRow {
    pub fn vad_silent(&self) -> bool {
        self.ref_active < 0.5
    }
}

/// One row of `vad_frames.csv`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VadFrameRow {
    pub song_id: String,
    pub segment: usize,
    pub frame: usize,
    pub correct: u8,
}

impl From<&SegmentScores> for SegmentRow {
    fn from(s: &SegmentScores) -> Self {
        Self {
            song_id: s.song_id.clone(),
            segment: s.segment_index,
            sdr: s.sdr,
            sir: s.sir,
            sar: s.sar,
            is_silent: s.is_silent,
            vad_correct: s.vad_correct,
            pes: (!s.pes_frames.is_empty()).then(|| s.pes_frames.iter().sum::<f64>() / s.pes_frames.len() as f64),
            vad_frames: s.vad_hits.len(),
            ref_active: s.ref_active,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) if x == f64::NEG_INFINITY => "-inf".into(),
        Some(x) => format!("{x}"),
    }
}

fn table_err(path: &Path, detail: impl ToString) -> MetricsError {
    MetricsError::Table {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> MetricsError {
    MetricsError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| table_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| table_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| table_err(path, e))?;
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}

const SEGMENT_HEADER: [&str; 10] = [
    "song_id",
    "segment",
    "sdr",
    "sir",
    "sar",
    "is_silent",
    "vad_correct",
    "pes",
    "vad_frames",
    "ref_active",
];

pub fn write_segments_csv(path: &Path, segments: &[SegmentScores]) -> Result<(), MetricsError> {
    write_csv(
        path,
        &SEGMENT_HEADER,
        segments.iter().map(|s| {
            let r = SegmentRow::from(s);
            vec![
                r.song_id,
                r.segment.to_string(),
                fmt_opt(r.sdr),
                fmt_opt(r.sir),
                fmt_opt(r.sar),
                u8::from(r.is_silent).to_string(),
                format!("{}", r.vad_correct),
                fmt_opt(r.pes),
                r.vad_frames.to_string(),
                format!("{}", r.ref_active),
            ]
        }),
    )
}

fn parse_opt(path: &Path, field: &str) -> Result<Option<f64>, MetricsError> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| table_err(path, format!("cannot parse `{field}` as a number")))
}

pub fn read_segments_csv(path: &Path) -> Result<Vec<SegmentRow>, MetricsError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| table_err(path, e))?;
    let header = r.headers().map_err(|e| table_err(path, e))?.clone();
    if header.len() < 7 || header.iter().take(7).ne(SEGMENT_HEADER.iter().take(7).copied()) {
        return Err(table_err(path, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| table_err(path, e))?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| get(i).parse::<usize>().map_err(|_| table_err(path, format!("bad integer `{}`", get(i))));
        rows.push(SegmentRow {
            song_id: get(0).to_string(),
            segment: int(1)?,
            sdr: parse_opt(path, get(2))?,
            sir: parse_opt(path, get(3))?,
            sar: parse_opt(path, get(4))?,
            is_silent: matches!(get(5), "1" | "true"),
            vad_correct: parse_opt(path, get(6))?.unwrap_or(0.0),
            pes: parse_opt(path, get(7))?,
            vad_frames: if get(8).is_empty() { 0 } else { int(8)? },
            ref_active: parse_opt(path, get(9))?.unwrap_or(1.0),
        });
    }
    Ok(rows)
}

pub fn write_vad_frames_csv(path: &Path, segments: &[SegmentScores]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in segments {
        for (k, &hit) in s.vad_hits.iter().enumerate() {
            w.serialize(VadFrameRow {
                song_id: s.song_id.clone(),
                segment: s.segment_index,
                frame: k,
                correct: hit.into(),
            })
            .map_err(|e| table_err(path, e))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| table_err(path, e))?;
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}

pub fn read_vad_frames_csv(path: &Path) -> Result<Vec<VadFrameRow>, MetricsError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| table_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| table_err(path, e))).collect()
}

pub fn write_kde_csv(path: &Path, table: &KdeTable) -> Result<(), MetricsError> {
    write_csv(
        path,
        &["x_db", "overall", "silent", "nonsilent"],
        (0..table.x.len()).map(|i| {
            vec![
                format!("{}", table.x[i]),
                format!("{}", table.overall[i]),
                format!("{}", table.silent[i]),
                format!("{}", table.nonsilent[i]),
            ]
        }),
    )
}

#[derive(Serialize)]
struct Summary<'a, E: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a MetricReport,
    #[serde(flatten)]
    extra: E,
}

/// `extra` is flattened into the top-level object next to the report.
pub fn write_summary_json(path: &Path, report: &MetricReport, extra: impl Serialize) -> Result<(), MetricsError> {
    let s = Summary {
        schema_version: SCHEMA_VERSION,
        report,
        extra,
    };
    let text = serde_json::to_string_pretty(&s).map_err(|e| table_err(path, e))?;
    write_atomic(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

/// Paired tests between two evaluation runs of the same material.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub alpha: f64,
    /// `(metric, result)`; metrics without any jointly defined pair are omitted.
    pub wilcoxon: Vec<(String, SignificanceResult)>,
    pub mcnemar: Option<SignificanceResult>,
}

impl Comparison {
    pub fn any_significant(&self) -> bool {
        self.wilcoxon.iter().map(|w| &w.1).chain(&self.mcnemar).any(|r| r.significant(self.alpha))
    }
}

/// Wilcoxon on SDR/SIR/SAR/PES over segments defined in both tables, McNemar
/// on per-frame VAD correctness when both frame tables are given.
pub fn compare_tables(
    a: &[SegmentRow],
    b: &[SegmentRow],
    vad: Option<(&[VadFrameRow], &[VadFrameRow])>,
    alpha: f64,
) -> Result<Comparison, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Misaligned(format!("{} vs {} segments", a.len(), b.len())));
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| x.song_id != y.song_id || x.segment != y.segment) {
        return Err(MetricsError::Misaligned(format!(
            "{}#{} vs {}#{}",
            x.song_id, x.segment, y.song_id, y.segment
        )));
    }
    type Get = fn(&SegmentRow) -> Option<f64>;
    let metrics: [(&str, Get); 4] = [("sdr", |r| r.sdr), ("sir", |r| r.sir), ("sar", |r| r.sar), ("pes", |r| r.pes)];
    let mut wilcoxon = Vec::new();
    for (name, get) in metrics {
        let (xs, ys): (Vec<f64>, Vec<f64>) = a.iter().zip(b).filter_map(|(x, y)| Some((get(x)?, get(y)?))).unzip();
        if !xs.is_empty() {
            wilcoxon.push((name.to_string(), wilcoxon_signed_rank(&xs, &ys)?));
        }
    }
    let mcnemar = match vad {
        None => None,
        Some((va, vb)) => {
            if va.len() != vb.len() {
                return Err(MetricsError::Misaligned(format!("{} vs {} VAD frames", va.len(), vb.len())));
            }
            let mut pairs = Vec::with_capacity(va.len());
            for (x, y) in va.iter().zip(vb) {
                if (&x.song_id, x.segment, x.frame) != (&y.song_id, y.segment, y.frame) {
                    return Err(MetricsError::Misaligned(format!(
                        "VAD frame {}#{}/{} vs {}#{}/{}",
                        x.song_id, x.segment, x.frame, y.song_id, y.segment, y.frame
                    )));
                }
                pairs.push((x.correct != 0, y.correct != 0));
            }
            (!pairs.is_empty()).then(|| mcnemar(&pairs)).transpose()?
        }
    };
    Ok(Comparison {
        alpha,
        wilcoxon,
        mcnemar,
    })
}
