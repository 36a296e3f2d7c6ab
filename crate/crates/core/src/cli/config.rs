use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::fsio::write_atomic;
use crate::metrics::{EvalParams, SCHEMA_VERSION};
use crate::model::ModelConfig;
use crate::trainer::{LossSpec, TrainConfig};

/// Name of the expanded config written into every run directory.
pub const CONFIG_FILE: &str = "config.json";

/// Fully expanded settings of one command invocation. Feeding the echoed
/// file back through `--config` repeats the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub subcommand: String,
    pub data: Option<PathBuf>,
    pub model: ModelConfig,
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub eval: EvalParams,
    pub valid_songs: Option<usize>,
    /// Working sample rate in Hz.
    pub sample_rate: u32,
    /// Checkpoint to resume training from.
    pub checkpoint: Option<PathBuf>,
    pub estimates: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(subcommand: &str, model: ModelConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            subcommand: subcommand.into(),
            data: None,
            loss: LossSpec::default_for(&model),
            train: TrainConfig::for_model(&model),
            model,
            eval: EvalParams::default(),
            valid_songs: None,
            sample_rate: 22050,
            checkpoint: None,
            estimates: None,
            references: None,
            output: None,
        }
    }

    /// Preset defaults, then the values of `file`, then the model preset
    /// flag. A preset flag replaces the file's model section entirely; other
    /// flags are applied by the caller.
    pub fn layered(subcommand: &str, file: Option<&Path>, preset: Option<&str>) -> Result<Self, CliError> {
        let mut overlay = match file {
            None => Value::Object(Default::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                let v: Value =
                    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                if !v.is_object() {
                    return Err(CliError::Usage(format!("{}: expected a JSON object", p.display())));
                }
                v
            }
        };
        let name = match preset {
            Some(p) => {
                overlay.as_object_mut().expect("object").remove("model");
                p.to_string()
            }
            None => overlay
                .pointer("/model/preset")
                .and_then(Value::as_str)
                .unwrap_or("htmd")
                .to_string(),
        };
        let model = ModelConfig::preset(&name)
            .ok_or_else(|| CliError::Usage(format!("unknown model preset `{name}` (htmd, convtasnet, waveunet)")))?;
        let mut base = serde_json::to_value(Self::defaults(subcommand, model)).expect("config serializes");
        merge(&mut base, overlay);
        let mut cfg: RunConfig =
            serde_json::from_value(base).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.subcommand = subcommand.into();
        cfg.schema_version = SCHEMA_VERSION;
        Ok(cfg)
    }

    /// Writes the config as `config.json` inside `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let path = dir.join(CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        write_atomic(&path, text.as_bytes()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Recursive object merge; non-object values in `overlay` replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
