//! Python bindings: models and checkpoints, separation, metrics and the CLI.

use std::path::PathBuf;

use htmd::audio::AudioBuffer;
use htmd::masker::receptive_field as masker_rf;
use htmd::metrics::{self, EvalParams, SegmentScores, SignificanceResult};
use htmd::model::{self, ModelConfig};
use htmd::trainer::{load_checkpoint, save_checkpoint, Checkpoint, LossSpec, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn preset(name: &str) -> PyResult<ModelConfig> {
    match name {
        "tiny" => Ok(ModelConfig::tiny_htmd()),
        _ => ModelConfig::preset(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset `{name}` (htmd, convtasnet, waveunet, tiny)"))),
    }
}

/// Number of trainable parameters of a model preset.
#[pyfunction]
fn param_count(preset_name: &str) -> PyResult<usize> {
    model::param_count(&preset(preset_name)?).map_err(value_err)
}

/// Receptive field of the masker of a preset, in samples.
#[pyfunction]
fn receptive_field(preset_name: &str) -> PyResult<usize> {
    match preset(preset_name)? {
        ModelConfig::Htmd { masker, .. } | ModelConfig::ConvTasNet { masker } => Ok(masker_rf(&masker)),
        ModelConfig::WaveUNet { .. } => Err(PyValueError::new_err("waveunet has no masker")),
    }
}

/// A separation model in inference mode.
#[pyclass(name = "Model")]
struct PyModel {
    inner: model::Model<f32>,
    chunk_len: Option<usize>,
}

#[pymethods]
impl PyModel {
    /// Freshly initialised model from a preset name.
    #[new]
    #[pyo3(signature = (preset_name = "htmd", seed = 0))]
    fn new(preset_name: &str, seed: u64) -> PyResult<Self> {
        let inner = model::Model::new(preset(preset_name)?, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(value_err)?;
        Ok(Self { inner, chunk_len: None })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = load_checkpoint(&path, None).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            chunk_len: ckpt.trainer.as_ref().map(|t| t.config.chunk_len),
            inner: ckpt.model,
        })
    }

    /// Writes the weights as a checkpoint without optimizer state.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        let mut ckpt = Checkpoint::fresh(self.inner.clone(), TrainConfig::default(), LossSpec::default_for(&self.inner.config));
        ckpt.adam = None;
        ckpt.trainer = None;
        save_checkpoint(&ckpt, &path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.config.name()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.param_count()
    }

    /// Separates mono samples; returns `(vocals, intermediate or None)`.
    #[pyo3(signature = (samples, sample_rate = 22050, chunk_len = None, batch_size = 4))]
    fn separate(
        &mut self,
        samples: Vec<f32>,
        sample_rate: u32,
        chunk_len: Option<usize>,
        batch_size: usize,
    ) -> PyResult<(Vec<f32>, Option<Vec<f32>>)> {
        let input = AudioBuffer::mono(samples, sample_rate).map_err(value_err)?;
        let chunk = chunk_len.or(self.chunk_len).unwrap_or(16384);
        let out = htmd::separate::separate(&mut self.inner, &input, chunk, batch_size.max(1)).map_err(value_err)?;
        Ok((out.vocals.samples, out.intermediate.map(|b| b.samples)))
    }
}

/// `(sdr, sir, sar)` in dB of one excerpt.
#[pyfunction]
#[pyo3(signature = (vocals, accompaniment, estimate, filter_len = 512))]
fn bss_eval(vocals: Vec<f64>, accompaniment: Vec<f64>, estimate: Vec<f64>, filter_len: usize) -> PyResult<(f64, f64, f64)> {
    let s = metrics::bss_eval(&vocals, &accompaniment, &estimate, filter_len).map_err(value_err)?;
    Ok((s.sdr, s.sir, s.sar))
}

/// Mean predicted energy at silence in dB, or None without silent frames.
#[pyfunction]
#[pyo3(signature = (estimate, vocals, frame_len = 4096, floor_db = -100.0))]
fn pes(estimate: Vec<f64>, vocals: Vec<f64>, frame_len: usize, floor_db: f64) -> PyResult<Option<f64>> {
    Ok(metrics::pes(&estimate, &vocals, frame_len, floor_db).map_err(value_err)?.mean_db)
}

/// Per-segment scores as a list of dicts.
#[pyfunction]
#[pyo3(signature = (vocals, accompaniment, estimate, sample_rate = 22050, filter_len = 512))]
fn evaluate<'py>(
    py: Python<'py>,
    vocals: Vec<f64>,
    accompaniment: Vec<f64>,
    estimate: Vec<f64>,
    sample_rate: u32,
    filter_len: usize,
) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
    let params = EvalParams {
        filter_len,
        ..EvalParams::default()
    };
    let segs = metrics::segment_metrics("song", &vocals, &accompaniment, &estimate, sample_rate, &params).map_err(value_err)?;
    segs.iter().map(|s| segment_dict(py, s)).collect()
}

fn segment_dict<'py>(py: Python<'py>, s: &SegmentScores) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("segment", s.segment_index)?;
    d.set_item("sdr", s.sdr)?;
    d.set_item("sir", s.sir)?;
    d.set_item("sar", s.sar)?;
    d.set_item("is_silent", s.is_silent)?;
    d.set_item("vad_correct", s.vad_correct)?;
    d.set_item("ref_active", s.ref_active)?;
    let pes = (!s.pes_frames.is_empty()).then(|| s.pes_frames.iter().sum::<f64>() / s.pes_frames.len() as f64);
    d.set_item("pes", pes)?;
    Ok(d)
}

fn result_tuple(r: SignificanceResult) -> (f64, f64, usize, String) {
    (r.statistic, r.p_value, r.n_effective, format!("{:?}", r.method).to_lowercase())
}

/// Wilcoxon signed-rank test: `(statistic, p, n, method)`.
#[pyfunction]
fn wilcoxon(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, usize, String)> {
    Ok(result_tuple(metrics::wilcoxon_signed_rank(&a, &b).map_err(value_err)?))
}

/// McNemar test on paired correctness flags: `(statistic, p, n, method)`.
#[pyfunction]
fn mcnemar(pairs: Vec<(bool, bool)>) -> PyResult<(f64, f64, usize, String)> {
    Ok(result_tuple(metrics::mcnemar(&pairs).map_err(value_err)?))
}

/// Runs the `htmd` command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let full: Vec<String> = std::iter::once("htmd".to_string()).chain(args).collect();
    py.detach(|| htmd::cli::run(full))
}

#[pymodule]
fn htmd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(receptive_field, m)?)?;
    m.add_function(wrap_pyfunction!(bss_eval, m)?)?;
    m.add_function(wrap_pyfunction!(pes, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
