//! Checkpoint file: `HTMDCKPT`, u32 LE version, u64 LE header length, JSON
//! header, then the raw little-endian f32 blobs listed in the header's
//! manifest (offsets relative to the first blob byte).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, EpochRecord, LossSpec, TrainConfig, TrainError};
use crate::fsio::write_atomic;
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"HTMDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Resumable position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot carry a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, String> {
        let bytes = hex::decode(&self.seed).map_err(|e| format!("rng seed: {e}"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| "rng seed must be 32 bytes".to_string())?;
        let pos: u128 = self.word_pos.parse().map_err(|e| format!("rng position: {e}"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything besides parameters needed to continue a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub loss: LossSpec,
    /// Completed epochs.
    pub epoch: usize,
    pub best_valid: Option<f64>,
    pub since_best: usize,
    pub rng: RngState,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: Option<Adam<f32>>,
    pub history: Vec<EpochRecord>,
    pub trainer: Option<TrainerState>,
}

impl Checkpoint {
    /// Start of a run: fresh optimizer, RNG seeded from `config.seed`.
    pub fn fresh(model: Model<f32>, config: TrainConfig, loss: LossSpec) -> Self {
        let adam = Adam::new(&model.store, config.learning_rate);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            model,
            adam: Some(adam),
            history: Vec::new(),
            trainer: Some(TrainerState {
                config,
                loss,
                epoch: 0,
                best_valid: None,
                since_best: 0,
                rng: RngState::capture(&rng),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    RunningMean,
    RunningVar,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model_config: ModelConfig,
    config_hash: String,
    manifest: Vec<ManifestEntry>,
    adam: Option<AdamHeader>,
    history: Vec<EpochRecord>,
    trainer: Option<TrainerState>,
}

struct BlobWriter {
    manifest: Vec<ManifestEntry>,
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn push(&mut self, name: &str, role: Role, shape: &[usize], data: &[f32]) {
        self.manifest.push(ManifestEntry {
            name: name.to_string(),
            role,
            shape: shape.to_vec(),
            offset: self.bytes.len(),
        });
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    let store = &ckpt.model.store;
    let mut w = BlobWriter {
        manifest: Vec::new(),
        bytes: Vec::new(),
    };
    for p in store.params() {
        w.push(&p.name, Role::Param, p.value.shape(), p.value.data());
    }
    for s in store.all_stats() {
        w.push(&s.name, Role::RunningMean, &[s.mean.len()], &s.mean);
        w.push(&s.name, Role::RunningVar, &[s.var.len()], &s.var);
    }
    if let Some(adam) = &ckpt.adam {
        for (i, p) in store.params().iter().enumerate() {
            w.push(&p.name, Role::AdamM, p.value.shape(), &adam.m[i]);
            w.push(&p.name, Role::AdamV, p.value.shape(), &adam.v[i]);
        }
    }
    let header = Header {
        format: "htmd-checkpoint".into(),
        version: CHECKPOINT_VERSION,
        model_config: ckpt.model.config.clone(),
        config_hash: ckpt.model.config.hash(),
        manifest: w.manifest,
        adam: ckpt.adam.as_ref().map(|a| AdamHeader {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            step: a.step,
        }),
        history: ckpt.history.clone(),
        trainer: ckpt.trainer.clone(),
    };
    let json = serde_json::to_vec_pretty(&header).map_err(|e| TrainError::Corrupt {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut out = Vec::with_capacity(20 + json.len() + w.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.bytes);
    write_atomic(path, &out).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a checkpoint. With `expected`, the embedded config must hash to the
/// same value.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Checkpoint, TrainError> {
    let path = path.as_ref();
    let corrupt = |detail: String| TrainError::Corrupt {
        path: path.to_path_buf(),
        detail,
    };
    let bytes = fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let blob_start = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..blob_start]).map_err(|e| corrupt(format!("header: {e}")))?;
    let blob = &bytes[blob_start..];

    let actual = header.model_config.hash();
    if header.config_hash != actual {
        return Err(TrainError::ConfigHash {
            expected: header.config_hash,
            found: actual,
        });
    }
    if let Some(exp) = expected {
        if exp.hash() != actual {
            return Err(TrainError::ConfigHash {
                expected: exp.hash(),
                found: actual,
            });
        }
    }

    let read = |entry: &ManifestEntry, shape: &[usize]| -> Result<Vec<f32>, TrainError> {
        if entry.shape != shape {
            return Err(corrupt(format!("`{}` has shape {:?}, model expects {shape:?}", entry.name, entry.shape)));
        }
        let n: usize = shape.iter().product();
        let end = entry.offset.checked_add(4 * n).filter(|&e| e <= blob.len());
        let end = end.ok_or_else(|| corrupt(format!("`{}` runs past the end of the file", entry.name)))?;
        Ok(blob[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    };
    let find = |name: &str, role: Role| {
        header
            .manifest
            .iter()
            .find(|e| e.name == name && e.role == role)
            .ok_or_else(|| corrupt(format!("manifest lacks {role:?} `{name}`")))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::<f32>::new(header.model_config.clone(), &mut rng)?;
    let mut expected_entries = 0;
    for p in model.store.params_mut() {
        let shape = p.value.shape().to_vec();
        let data = read(find(&p.name, Role::Param)?, &shape)?;
        p.value.data_mut().copy_from_slice(&data);
        expected_entries += 1;
    }
    for s in model.store.all_stats_mut() {
        let c = s.mean.len();
        s.mean = read(find(&s.name, Role::RunningMean)?, &[c])?;
        s.var = read(find(&s.name, Role::RunningVar)?, &[c])?;
        expected_entries += 2;
    }
    let adam = match &header.adam {
        None => None,
        Some(h) => {
            let mut a = Adam::new(&model.store, h.lr);
            a.beta1 = h.beta1;
            a.beta2 = h.beta2;
            a.eps = h.eps;
            a.step = h.step;
            for (i, p) in model.store.params().iter().enumerate() {
                a.m[i] = read(find(&p.name, Role::AdamM)?, p.value.shape())?;
                a.v[i] = read(find(&p.name, Role::AdamV)?, p.value.shape())?;
                expected_entries += 2;
            }
            Some(a)
        }
    };
    if header.manifest.len() != expected_entries {
        return Err(corrupt(format!(
            "manifest has {} entries, model needs {expected_entries}",
            header.manifest.len()
        )));
    }
    if let Some(t) = &header.trainer {
        t.rng.restore().map_err(corrupt)?;
    }
    Ok(Checkpoint {
        model,
        adam,
        history: header.history,
        trainer: header.trainer,
    })
}
