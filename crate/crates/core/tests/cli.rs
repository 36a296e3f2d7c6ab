use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use htmd::audio::{load_wav, write_wav, AudioBuffer, SampleFormat};
use htmd::cli::{intermediate_path, resolve_train, Cli, Command as Sub, RunConfig};
use htmd::metrics::read_segments_csv;
use htmd::model::ModelConfig;
use htmd::trainer::LossSpec;
use serde_json::Value;

fn htmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htmd")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn wav(path: &Path, samples: Vec<f32>, rate: u32) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_wav(&AudioBuffer::mono(samples, rate).unwrap(), path, SampleFormat::Float32).unwrap();
}

/// Vocals with a silent first second, sinusoidal accompaniment.
fn stems(n: usize, k: f32) -> (Vec<f32>, Vec<f32>) {
    let v: Vec<f32> = (0..n)
        .map(|i| if i < 22050 { 0.0 } else { 0.4 * (i as f32 * 0.0627 * k).sin() })
        .collect();
    let a: Vec<f32> = (0..n).map(|i| 0.2 * (i as f32 * 0.0131 + k).sin() + 0.05 * (i as f32 * 0.71).cos()).collect();
    (v, a)
}

fn song(root: &Path, name: &str, n: usize, k: f32) -> (Vec<f32>, Vec<f32>) {
    let (v, a) = stems(n, k);
    let m: Vec<f32> = v.iter().zip(&a).map(|(x, y)| x + y).collect();
    wav(&root.join(name).join("mixture.wav"), m, 22050);
    wav(&root.join(name).join("vocals.wav"), v.clone(), 22050);
    (v, a)
}

fn parse_train(args: &[&str]) -> RunConfig {
    let mut full = vec!["htmd", "train"];
    full.extend_from_slice(args);
    match Cli::try_parse_from(full).unwrap().command {
        Sub::Train(a) => resolve_train(&a).unwrap(),
        _ => unreachable!(),
    }
}

#[test]
fn train_presets_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    let c = parse_train(&["--preset", "htmd", "--loss", "mse-mse", "--data", d]);
    assert_eq!((c.loss.beta, c.loss.alpha), (0.5, 1.0));
    let c = parse_train(&["--preset", "convtasnet", "--data", d]);
    assert_eq!(c.train.batch_size, 8);
    assert_eq!(c.model, ModelConfig::conv_tasnet());
    let c = parse_train(&["--data", d, "--loss-mid", "mae", "--beta", "0.3", "--batch-size", "4"]);
    assert_eq!(c.loss.mid_kind, LossSpec::preset("mae-mae").unwrap().mid_kind);
    assert_eq!((c.loss.beta, c.train.batch_size), (0.3, 4));

    assert_eq!(code(&htmd(&["train"])), 1);
    assert_eq!(code(&htmd(&["train", "--data", "/nonexistent/dataset"])), 1);
    assert_eq!(code(&htmd(&["train", "--data", d, "--preset", "waveunet", "--loss", "mse-mae"])), 1);
    assert_eq!(code(&htmd(&["frobnicate"])), 1);
    assert_eq!(code(&htmd(&["--help"])), 0);
    // Indexing finds no train/ directory.
    assert_eq!(code(&htmd(&["train", "--data", d, "--out", p(&dir.path().join("run"))])), 2);
}

#[test]
fn train_separate_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    for (i, name) in ["a", "b", "c"].iter().enumerate() {
        song(&data.join("train"), name, 4096, 1.0 + i as f32);
    }
    let cfg = dir.path().join("tiny.json");
    let tiny = serde_json::json!({
        "model": ModelConfig::tiny_htmd(),
        "train": {"chunk_len": 256, "batch_size": 2, "steps_per_epoch": 2, "max_epochs": 2, "learning_rate": 1e-3}
    });
    fs::write(&cfg, tiny.to_string()).unwrap();
    let run1 = dir.path().join("run1");
    let o = htmd(&["train", "--config", p(&cfg), "--data", p(&data), "--valid-songs", "1", "--out", p(&run1)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["best.ckpt", "last.ckpt", "history.csv", "config.json"] {
        assert!(run1.join(f).is_file(), "{f}");
    }
    let echoed: Value = serde_json::from_str(&fs::read_to_string(run1.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["loss"]["beta"], 1.0);
    assert_eq!(echoed["train"]["seed"], 0);

    let run2 = dir.path().join("run2");
    let o = htmd(&["train", "--config", p(&run1.join("config.json")), "--out", p(&run2)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(run1.join("history.csv")).unwrap(), fs::read(run2.join("history.csv")).unwrap());
    assert_eq!(fs::read(run1.join("best.ckpt")).unwrap(), fs::read(run2.join("best.ckpt")).unwrap());

    let ckpt = p(&run1.join("best.ckpt")).to_string();
    let n = 30 * 22050;
    let input = dir.path().join("in.wav");
    wav(&input, stems(n, 1.5).0, 22050);
    let out = dir.path().join("out.wav");
    let o = htmd(&["separate", "--checkpoint", &ckpt, "--input", p(&input), "--output", p(&out), "--emit-intermediate", "--batch-size", "64"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_wav(&out).unwrap().frames(), n);
    assert_eq!(load_wav(intermediate_path(&out)).unwrap().frames(), n);

    let zero = dir.path().join("zero.wav");
    wav(&zero, vec![0.0; 5000], 22050);
    let o = htmd(&["separate", "--checkpoint", &ckpt, "--input", p(&zero), "--output", p(&out)]);
    assert_eq!(code(&o), 0);
    assert!(load_wav(&out).unwrap().samples.iter().all(|v| v.is_finite()));

    let hi = dir.path().join("hi.wav");
    wav(&hi, vec![0.1; 5001], 44100);
    assert_eq!(code(&htmd(&["separate", "--checkpoint", &ckpt, "--input", p(&hi), "--output", p(&out)])), 2);
    let o = htmd(&["separate", "--checkpoint", &ckpt, "--input", p(&hi), "--output", p(&out), "--resample"]);
    assert_eq!(code(&o), 0);
    assert_eq!(load_wav(&out).unwrap().frames(), 2501);

    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"HTMDCKPT garbage").unwrap();
    assert_eq!(code(&htmd(&["separate", "--checkpoint", p(&bad), "--input", p(&zero), "--output", p(&out)])), 2);
}

#[test]
fn evaluate_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs");
    let perfect = dir.path().join("perfect");
    let wrong = dir.path().join("wrong");
    let n = 3 * 22050 + 100;
    for (i, name) in ["s1", "s2"].iter().enumerate() {
        let (v, a) = song(&refs, name, n, 1.0 + i as f32);
        wav(&perfect.join(format!("{name}.wav")), v, 22050);
        wav(&wrong.join(name).join("vocals.wav"), a, 22050);
    }
    song(&refs, "orphan", n, 3.0);
    let args = |est: &Path, out: &Path| {
        htmd(&["evaluate", "--estimates", p(est), "--references", p(&refs), "--out", p(out), "--filter-len", "32"])
    };

    let ev1 = dir.path().join("ev1");
    let o = args(&perfect, &ev1);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_str(&fs::read_to_string(ev1.join("summary.json")).unwrap()).unwrap();
    // Two songs x three segments, the first of each silent.
    assert_eq!(s["n_segments"], 6);
    assert_eq!(s["n_silent"], 2);
    assert_eq!(s["inf_count"]["sdr"], 4);
    assert_eq!(s["pes_mean"], -100.0);
    assert_eq!(s["n_unpaired"], 1);
    assert_eq!(s["unpaired"][0], "orphan");
    assert_eq!(s["schema_version"], 1);
    assert!(ev1.join("kde.csv").is_file() || s["sdr_split"]["bandwidth"].is_null());

    let ev2 = dir.path().join("ev2");
    assert_eq!(code(&args(&wrong, &ev2)), 0);
    let s: Value = serde_json::from_str(&fs::read_to_string(ev2.join("summary.json")).unwrap()).unwrap();
    assert!(s["segment_median"]["sir"].as_f64().unwrap() < -20.0);
    let rows = read_segments_csv(&ev2.join("segments.csv")).unwrap();
    assert!(rows.iter().filter_map(|r| r.sdr).all(|v| v < 0.0));

    let seg1 = ev1.join("segments.csv");
    let seg2 = ev2.join("segments.csv");
    let json = dir.path().join("sig.json");
    let o = htmd(&["significance", p(&seg2), p(&seg2), "--out", p(&json)]);
    assert_eq!(code(&o), 0);
    let sig: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let tests = sig["tests"].as_array().unwrap();
    assert!(tests.len() >= 4);
    assert!(tests.iter().all(|t| t["p_value"] == 1.0 && t["significant"] == false));
    assert_eq!(sig["alpha"], 0.01);
    assert_eq!(code(&htmd(&["significance", p(&seg1), p(&seg2)])), 0);

    let short = dir.path().join("short.csv");
    let text = fs::read_to_string(&seg1).unwrap();
    fs::write(&short, text.lines().take(3).collect::<Vec<_>>().join("\n")).unwrap();
    assert_eq!(code(&htmd(&["significance", p(&seg1), p(&short)])), 2);

    let kde = dir.path().join("kde.csv");
    assert_eq!(code(&htmd(&["export-kde", p(&seg2), "--out", p(&kde), "--grid", "64"])), 0);
    assert_eq!(fs::read_to_string(&kde).unwrap().lines().count(), 65);

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&args(&empty, &dir.path().join("ev3"))), 2);
    assert_eq!(code(&htmd(&["evaluate", "--estimates", p(&perfect), "--references", p(&empty), "--out", p(&ev1)])), 2);
    assert_eq!(code(&htmd(&["evaluate", "--estimates", p(&perfect), "--out", p(&ev1)])), 1);
}
