use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{CliError, KdeArgs, SignificanceArgs};
use crate::fsio::write_atomic;
use crate::metrics::{
    compare_tables, kde_export, median, read_segments_csv, read_vad_frames_csv, write_kde_csv, Bandwidth, KdeTable,
    SegmentRow, SCHEMA_VERSION,
};

/// Segment SDR split by reference VAD activity.
#[derive(Clone, Debug, Serialize)]
pub struct SdrSplit {
    pub n_silent: usize,
    pub n_nonsilent: usize,
    pub silent_median_sdr: Option<f64>,
    pub nonsilent_median_sdr: Option<f64>,
    pub bandwidth: Option<f64>,
}

/// KDE of the finite segment SDRs; `None` with fewer than two of them.
pub fn sdr_kde(rows: &[SegmentRow], bandwidth: Bandwidth, grid: usize) -> Result<(SdrSplit, Option<KdeTable>), CliError> {
    let kept: Vec<&SegmentRow> = rows.iter().filter(|r| r.sdr.is_some_and(f64::is_finite)).collect();
    let values: Vec<f64> = kept.iter().map(|r| r.sdr.expect("filtered")).collect();
    let silent: Vec<bool> = kept.iter().map(|r| r.vad_silent()).collect();
    let pick = |want: bool| -> Vec<f64> {
        values.iter().zip(&silent).filter(|(_, s)| **s == want).map(|(v, _)| *v).collect()
    };
    let (sil, non) = (pick(true), pick(false));
    let table = if values.len() >= 2 {
        Some(kde_export(&values, &silent, bandwidth, grid)?)
    } else {
        None
    };
    Ok((
        SdrSplit {
            n_silent: sil.len(),
            n_nonsilent: non.len(),
            silent_median_sdr: median(&sil),
            nonsilent_median_sdr: median(&non),
            bandwidth: table.as_ref().map(|t| t.bandwidth),
        },
        table,
    ))
}

fn sibling_vad(segments: &Path) -> PathBuf {
    segments.with_file_name("vad_frames.csv")
}

#[derive(Serialize)]
struct Row<'a> {
    metric: &'a str,
    test: String,
    statistic: f64,
    p_value: f64,
    n: usize,
    method: String,
    significant: bool,
}

pub fn significance(a: SignificanceArgs) -> Result<(), CliError> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Usage(format!("alpha {} must lie in (0, 1)", a.alpha)));
    }
    let ta = read_segments_csv(&a.a)?;
    let tb = read_segments_csv(&a.b)?;
    let (va, vb) = (sibling_vad(&a.a), sibling_vad(&a.b));
    let frames = if va.is_file() && vb.is_file() {
        Some((read_vad_frames_csv(&va)?, read_vad_frames_csv(&vb)?))
    } else {
        eprintln!("note: vad_frames.csv missing next to one of the tables; skipping McNemar");
        None
    };
    let cmp = compare_tables(&ta, &tb, frames.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice())), a.alpha)?;

    let mut rows: Vec<Row> = cmp
        .wilcoxon
        .iter()
        .map(|(m, r)| (m.as_str(), r))
        .chain(cmp.mcnemar.as_ref().map(|r| ("vad", r)))
        .map(|(metric, r)| Row {
            metric,
            test: format!("{:?}", r.test).to_lowercase(),
            statistic: r.statistic,
            p_value: r.p_value,
            n: r.n_effective,
            method: format!("{:?}", r.method).to_lowercase(),
            significant: r.significant(a.alpha),
        })
        .collect();
    rows.sort_by_key(|r| r.metric == "vad");
    println!("{:<6} {:<9} {:>12} {:>12} {:>7} {:<12} p<{}", "metric", "test", "statistic", "p", "n", "method", a.alpha);
    for r in &rows {
        println!(
            "{:<6} {:<9} {:>12.4} {:>12.4e} {:>7} {:<12} {}",
            r.metric,
            r.test,
            r.statistic,
            r.p_value,
            r.n,
            r.method,
            if r.significant { "yes" } else { "no" }
        );
    }
    if let Some(out) = &a.out {
        let doc = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "a": a.a,
            "b": a.b,
            "alpha": a.alpha,
            "any_significant": cmp.any_significant(),
            "tests": rows,
        });
        let text = serde_json::to_string_pretty(&doc).expect("serializes");
        write_atomic(out, text.as_bytes()).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

pub fn export_kde(a: KdeArgs) -> Result<(), CliError> {
    let bandwidth = match a.bandwidth {
        None => Bandwidth::Auto,
        Some(h) if h > 0.0 && h.is_finite() => Bandwidth::Fixed(h),
        Some(h) => return Err(CliError::Usage(format!("bandwidth {h} must be positive"))),
    };
    if a.grid < 2 {
        return Err(CliError::Usage("--grid needs at least two points".into()));
    }
    let rows = read_segments_csv(&a.segments)?;
    let (split, table) = sdr_kde(&rows, bandwidth, a.grid)?;
    let table = table.ok_or_else(|| {
        CliError::Data(format!("{}: fewer than two finite SDR values", a.segments.display()))
    })?;
    write_kde_csv(&a.out, &table)?;
    println!(
        "wrote {} (bandwidth {:.4} dB; {} silent, {} non-silent segments)",
        a.out.display(),
        table.bandwidth,
        split.n_silent,
        split.n_nonsilent
    );
    Ok(())
}
