//! Separation quality metrics: BSS-eval ratios over 1-s segments, predicted
//! energy at silence, energy-based VAD agreement, aggregation, paired
//! significance tests and KDE export.

mod aggregate;
mod bss;
mod kde;
mod report;
mod segments;
mod stats;

use thiserror::Error;

pub use aggregate::{aggregate, median, MetricReport, Triple};
pub use bss::{bss_decompose, bss_eval, scores, BssScores, Decomposition};
pub use kde::{kde_export, Bandwidth, KdeTable};
pub use report::{
    compare_tables, read_segments_csv, read_vad_frames_csv, write_kde_csv, write_segments_csv,
    write_summary_json, write_vad_frames_csv, Comparison, SegmentRow, VadFrameRow, SCHEMA_VERSION,
};
pub use segments::{pes, segment_metrics, vad_accuracy, vad_labels, EvalParams, PesResult, SegmentScores};
pub use stats::{mcnemar, wilcoxon_signed_rank, Method, SignificanceResult, TestKind};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("reference vocals are identically zero")]
    SilentReference,
    #[error("non-finite input")]
    NonFinite,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("no defined segments to aggregate")]
    NothingDefined,
    #[error("tables are not aligned: {0}")]
    Misaligned(String),
    #[error("{path}: {detail}")]
    Table { path: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
