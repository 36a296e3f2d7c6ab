//! Composite separation models built from the masker and denoiser.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diff::{DiffError, Graph, NormMode, ParamStore, Real, Tensor, Var};
use crate::masker::{Masker, MaskerConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ModelConfig {
    /// Masker followed by a denoiser; both outputs are supervised.
    Htmd {
        masker: MaskerConfig,
        denoiser: DenoiserConfig,
    },
    ConvTasNet { masker: MaskerConfig },
    WaveUNet { denoiser: DenoiserConfig },
}

impl ModelConfig {
    pub fn htmd() -> Self {
        Self::Htmd {
            masker: MaskerConfig::htmd(),
            denoiser: DenoiserConfig::htmd(),
        }
    }

    pub fn conv_tasnet() -> Self {
        Self::ConvTasNet {
            masker: MaskerConfig::conv_tasnet(),
        }
    }

    pub fn wave_u_net() -> Self {
        Self::WaveUNet {
            denoiser: DenoiserConfig::wave_u_net(),
        }
    }

    /// Looks up `htmd`, `convtasnet` or `waveunet`.
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "htmd" => Some(Self::htmd()),
            "convtasnet" => Some(Self::conv_tasnet()),
            "waveunet" => Some(Self::wave_u_net()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Htmd { .. } => "htmd",
            Self::ConvTasNet { .. } => "convtasnet",
            Self::WaveUNet { .. } => "waveunet",
        }
    }

    pub fn has_intermediate(&self) -> bool {
        matches!(self, Self::Htmd { .. })
    }

    /// Tiny HTMD network used for gradient checks and overfitting runs.
    pub fn tiny_htmd() -> Self {
        Self::Htmd {
            masker: MaskerConfig {
                n_filters: 16,
                bottleneck: 8,
                conv_channels: 16,
                skip_channels: 8,
                blocks_per_repeat: 3,
                ..MaskerConfig::htmd()
            },
            denoiser: DenoiserConfig {
                depth: 4,
                growth: 4,
                bottleneck: crate::denoiser::Bottleneck::Recurrent {
                    layers: 2,
                    hidden: 8,
                },
                ..DenoiserConfig::htmd()
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Self::Htmd { masker, denoiser } => {
                masker.validate()?;
                denoiser.validate()
            }
            Self::ConvTasNet { masker } => masker.validate(),
            Self::WaveUNet { denoiser } => denoiser.validate(),
        }
    }

    /// Rejects input lengths the network cannot map back to the same length.
    pub fn check_input_len(&self, t: usize) -> Result<(), ModelError> {
        let masker_ok = |m: &MaskerConfig| {
            if t < m.kernel_len || (t - m.kernel_len) % m.stride != 0 {
                Err(ModelError::Shape(format!(
                    "input length {t} does not tile into {}-sample frames with hop {}",
                    m.kernel_len, m.stride
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Self::Htmd { masker, denoiser } => {
                masker_ok(masker)?;
                denoiser.check_len(t)
            }
            Self::ConvTasNet { masker } => masker_ok(masker),
            Self::WaveUNet { denoiser } => denoiser.check_len(t),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Clone, Debug)]
enum Layout {
    Htmd { masker: Masker, denoiser: Denoiser },
    ConvTasNet(Masker),
    WaveUNet(Denoiser),
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutputs {
    /// `[batch, 1, T]` final vocal estimate.
    pub final_est: Var,
    /// Intermediate (masker) estimate, present for the composite model only.
    pub mid: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    layout: Layout,
}

impl<F: Real> Model<F> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let layout = match &config {
            ModelConfig::Htmd { masker, denoiser } => Layout::Htmd {
                masker: Masker::new(masker.clone(), "masker", &mut store, rng)?,
                denoiser: Denoiser::new(denoiser.clone(), "denoiser", &mut store, rng)?,
            },
            ModelConfig::ConvTasNet { masker } => {
                Layout::ConvTasNet(Masker::new(masker.clone(), "masker", &mut store, rng)?)
            }
            ModelConfig::WaveUNet { denoiser } => {
                Layout::WaveUNet(Denoiser::new(denoiser.clone(), "denoiser", &mut store, rng)?)
            }
        };
        Ok(Self {
            config,
            store,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn masker(&self) -> Option<&Masker> {
        match &self.layout {
            Layout::Htmd { masker, .. } | Layout::ConvTasNet(masker) => Some(masker),
            Layout::WaveUNet(_) => None,
        }
    }

    pub fn denoiser(&self) -> Option<&Denoiser> {
        match &self.layout {
            Layout::Htmd { denoiser, .. } | Layout::WaveUNet(denoiser) => Some(denoiser),
            Layout::ConvTasNet(_) => None,
        }
    }

    /// Records a forward pass of `x: [batch, 1, T]`. In train mode the
    /// batch-norm running statistics are updated.
    pub fn forward(&mut self, g: &mut Graph<F>, x: Var, mode: NormMode) -> Result<ModelOutputs, ModelError> {
        let (_, _, t) = g.value(x).dims3("forward")?;
        self.config.check_input_len(t)?;
        let store = &mut self.store;
        match &self.layout {
            Layout::Htmd { masker, denoiser } => {
                let mid = masker.mask_and_decode(g, store, x, mode)?.estimate;
                let final_est = denoiser.denoise(g, store, mid)?;
                Ok(ModelOutputs {
                    final_est,
                    mid: Some(mid),
                })
            }
            Layout::ConvTasNet(masker) => Ok(ModelOutputs {
                final_est: masker.mask_and_decode(g, store, x, mode)?.estimate,
                mid: None,
            }),
            Layout::WaveUNet(denoiser) => Ok(ModelOutputs {
                final_est: denoiser.denoise(g, store, x)?,
                mid: None,
            }),
        }
    }

    /// Eval-mode forward of a `[batch, 1, T]` tensor; returns the final and
    /// (if any) intermediate estimates.
    pub fn infer(&mut self, x: Tensor<F>) -> Result<(Tensor<F>, Option<Tensor<F>>), ModelError> {
        let mut g = Graph::new();
        let xv = g.input(x);
        let out = self.forward(&mut g, xv, NormMode::Eval)?;
        let mid = out.mid.map(|m| g.value(m).clone());
        Ok((g.value(out.final_est).clone(), mid))
    }

    /// Same network with parameters converted to another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }
}

/// Trainable parameter count of a configuration.
pub fn param_count(config: &ModelConfig) -> Result<usize, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(Model::<f32>::new(config.clone(), &mut rng)?.param_count())
}
