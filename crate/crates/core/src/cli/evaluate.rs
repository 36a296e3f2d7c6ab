use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

use serde::Serialize;

use super::tables::{sdr_kde, SdrSplit};
use super::{CliError, EvalArgs, RunConfig};
use crate::audio::{load_wav, to_mono, to_working_format};
use crate::metrics::{
    aggregate, segment_metrics, write_kde_csv, write_segments_csv, write_summary_json, write_vad_frames_csv,
    Bandwidth, EvalParams, SegmentRow, SegmentScores,
};

#[derive(Debug, Serialize)]
struct Skipped {
    song: String,
    reason: String,
}

#[derive(Serialize)]
struct SummaryExtra<'a> {
    config: &'a RunConfig,
    songs: Vec<String>,
    /// References without an estimate, then estimates without a reference.
    unpaired: Vec<String>,
    n_unpaired: usize,
    skipped: Vec<Skipped>,
    n_skipped: usize,
    sdr_split: SdrSplit,
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

fn name_of(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Songs with both reference stems, by name.
fn reference_songs(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter(|p| p.join("mixture.wav").is_file() && p.join("vocals.wav").is_file())
        .map(|p| (name_of(&p), p))
        .collect())
}

/// `<song>.wav` files and `<song>/vocals.wav` directories; the flat file
/// wins when both exist.
fn estimate_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let mut out = BTreeMap::new();
    for p in list_dir(dir)? {
        if p.is_dir() && p.join("vocals.wav").is_file() {
            out.entry(name_of(&p)).or_insert(p.join("vocals.wav"));
        } else if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.insert(stem, p);
        }
    }
    Ok(out)
}

/// Scores one song; references are brought to the estimate's rate.
pub fn score_song(song: &str, reference: &Path, estimate: &Path, params: &EvalParams) -> Result<Vec<SegmentScores>, CliError> {
    let est = to_mono(&load_wav(estimate)?)?;
    let rate = est.sample_rate;
    let mix = to_working_format(&load_wav(reference.join("mixture.wav"))?, rate)?;
    let voc = to_working_format(&load_wav(reference.join("vocals.wav"))?, rate)?;
    if mix.frames() != voc.frames() {
        return Err(CliError::Data(format!(
            "mixture has {} samples, vocals {}",
            mix.frames(),
            voc.frames()
        )));
    }
    if est.frames() != voc.frames() {
        return Err(CliError::Data(format!(
            "estimate has {} samples, reference {} at {rate} Hz",
            est.frames(),
            voc.frames()
        )));
    }
    let v: Vec<f64> = voc.samples.iter().map(|&x| x as f64).collect();
    let acc: Vec<f64> = mix.samples.iter().zip(&voc.samples).map(|(&m, &x)| m as f64 - x as f64).collect();
    let e: Vec<f64> = est.samples.iter().map(|&x| x as f64).collect();
    Ok(segment_metrics(song, &v, &acc, &e, rate, params)?)
}

fn resolve(a: &EvalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::layered("evaluate", a.config.as_deref(), None)?;
    if a.estimates.is_some() {
        cfg.estimates = a.estimates.clone();
    }
    if a.references.is_some() {
        cfg.references = a.references.clone();
    }
    if a.out.is_some() {
        cfg.output = a.out.clone();
    }
    let p = &mut cfg.eval;
    if let Some(v) = a.filter_len {
        p.filter_len = v;
    }
    if let Some(v) = a.seg_len {
        p.seg_len_secs = v;
    }
    if let Some(v) = a.pes_floor {
        p.pes_floor_db = v;
    }
    if let Some(v) = a.vad_threshold {
        p.vad_threshold_db = v;
    }
    if p.filter_len == 0 || !(p.seg_len_secs > 0.0) || p.pes_frame == 0 || !(p.vad_frame_ms > 0.0) {
        return Err(CliError::Usage("filter length, segment length and frame sizes must be positive".into()));
    }
    for (flag, dir) in [("--estimates", &cfg.estimates), ("--references", &cfg.references)] {
        match dir {
            None => return Err(CliError::Usage(format!("missing {flag} <dir>"))),
            Some(d) if !d.is_dir() => {
                return Err(CliError::Usage(format!("{flag} {} is not a directory", d.display())))
            }
            Some(_) => {}
        }
    }
    if cfg.output.is_none() {
        return Err(CliError::Usage("missing --out <dir>".into()));
    }
    Ok(cfg)
}

pub fn run(a: EvalArgs) -> Result<(), CliError> {
    if a.grid < 2 {
        return Err(CliError::Usage("--grid needs at least two points".into()));
    }
    let cfg = resolve(&a)?;
    let (est_dir, ref_dir, out) = (
        cfg.estimates.clone().expect("resolved"),
        cfg.references.clone().expect("resolved"),
        cfg.output.clone().expect("resolved"),
    );
    let refs = reference_songs(&ref_dir)?;
    let ests = estimate_files(&est_dir)?;
    if refs.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no <song>/mixture.wav + vocals.wav references",
            ref_dir.display()
        )));
    }
    if ests.is_empty() {
        return Err(CliError::Data(format!("{}: no estimates", est_dir.display())));
    }
    let pairs: Vec<(String, PathBuf, PathBuf)> = refs
        .iter()
        .filter_map(|(s, r)| ests.get(s).map(|e| (s.clone(), r.clone(), e.clone())))
        .collect();
    let unpaired: Vec<String> = refs
        .keys()
        .filter(|s| !ests.contains_key(*s))
        .chain(ests.keys().filter(|s| !refs.contains_key(*s)))
        .cloned()
        .collect();
    for s in &unpaired {
        eprintln!("warning: `{s}` has no counterpart; skipped");
    }
    if pairs.is_empty() {
        return Err(CliError::Data("no song has both an estimate and a reference".into()));
    }
    cfg.echo(&out)?;

    let jobs = a
        .jobs
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, pairs.len());
    let next = AtomicUsize::new(0);
    let mut results: Vec<(usize, Result<Vec<SegmentScores>, CliError>)> = thread::scope(|scope| {
        let workers: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some((song, r, e)) = pairs.get(i) else { break };
                        done.push((i, score_song(song, r, e, &cfg.eval)));
                    }
                    done
                })
            })
            .collect();
        workers.into_iter().flat_map(|w| w.join().expect("evaluation worker panicked")).collect()
    });
    results.sort_by_key(|r| r.0);

    let mut segments = Vec::new();
    let mut songs = Vec::new();
    let mut skipped = Vec::new();
    for (i, r) in results {
        let song = pairs[i].0.clone();
        match r {
            Ok(s) => {
                segments.extend(s);
                songs.push(song);
            }
            Err(e @ CliError::Numeric(_)) => return Err(CliError::Numeric(format!("song `{song}`: {e}"))),
            Err(e) => {
                eprintln!("warning: song `{song}` skipped: {e}");
                skipped.push(Skipped {
                    song,
                    reason: e.to_string(),
                });
            }
        }
    }
    if segments.is_empty() {
        return Err(CliError::Data("no song could be evaluated".into()));
    }
    let report = aggregate(&segments)?;
    let rows: Vec<SegmentRow> = segments.iter().map(SegmentRow::from).collect();
    let (sdr_split, kde) = sdr_kde(&rows, Bandwidth::Auto, a.grid)?;

    write_segments_csv(&out.join("segments.csv"), &segments)?;
    write_vad_frames_csv(&out.join("vad_frames.csv"), &segments)?;
    if let Some(t) = &kde {
        write_kde_csv(&out.join("kde.csv"), t)?;
    }
    let n_skipped = skipped.len();
    write_summary_json(
        &out.join("summary.json"),
        &report,
        SummaryExtra {
            config: &cfg,
            songs,
            n_unpaired: unpaired.len(),
            unpaired,
            skipped,
            n_skipped,
            sdr_split,
        },
    )?;

    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
    println!(
        "{} songs, {} segments ({} silent): median SDR {:.2} / SIR {:.2} / SAR {:.2} dB; mean SDR {} dB; PES {} dB; VAD {}%",
        report.n_songs,
        report.n_segments,
        report.n_silent,
        report.segment_median.sdr,
        report.segment_median.sir,
        report.segment_median.sar,
        opt(report.segment_mean.sdr),
        opt(report.pes_mean),
        opt(report.vad_percent)
    );
    println!("results in {}", out.display());
    Ok(())
}
