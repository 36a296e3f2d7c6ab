//! Latent masking network: linear strided encoder, dilated temporal
//! convolutional mask estimator, transposed-convolution decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{
    BatchNormSpec, Conv1dSpec, DiffError, Graph, InitSpec, NormMode, Padding, ParamId, ParamStore,
    Real, StatsId, Var,
};
use crate::model::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskerConfig {
    /// Latent channels N.
    pub n_filters: usize,
    /// Encoder/decoder kernel length L in samples.
    pub kernel_len: usize,
    /// Encoder hop in samples.
    pub stride: usize,
    /// Bottleneck channels B.
    pub bottleneck: usize,
    /// Hidden channels H of each block.
    pub conv_channels: usize,
    /// Skip-path channels.
    pub skip_channels: usize,
    /// Depthwise kernel width P.
    pub kernel: usize,
    /// Blocks X per repeat; dilations 1, 2, ..., 2^(X-1).
    pub blocks_per_repeat: usize,
    /// Repeats R.
    pub repeats: usize,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl MaskerConfig {
    /// Single repeat of ten blocks (dilations up to 2^9).
    pub fn htmd() -> Self {
        Self {
            n_filters: 512,
            kernel_len: 16,
            stride: 8,
            bottleneck: 128,
            conv_channels: 512,
            skip_channels: 128,
            kernel: 3,
            blocks_per_repeat: 10,
            repeats: 1,
            leaky_slope: 0.3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Conv-TasNet baseline: three repeats of nine blocks.
    pub fn conv_tasnet() -> Self {
        Self {
            blocks_per_repeat: 9,
            repeats: 3,
            ..Self::htmd()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            self.n_filters,
            self.kernel_len,
            self.stride,
            self.bottleneck,
            self.conv_channels,
            self.skip_channels,
            self.kernel,
            self.blocks_per_repeat,
            self.repeats,
        ];
        if positive.contains(&0) {
            return Err(ModelError::Config("masker sizes must all be positive".into()));
        }
        if self.kernel_len % self.stride != 0 {
            return Err(ModelError::Config(format!(
                "stride {} must divide kernel length {}",
                self.stride, self.kernel_len
            )));
        }
        Ok(())
    }

    /// Number of encoder frames for an input of `samples`.
    pub fn frames(&self, samples: usize) -> Option<usize> {
        (samples >= self.kernel_len).then(|| (samples - self.kernel_len) / self.stride + 1)
    }

    fn bn(&self, mode: NormMode) -> BatchNormSpec {
        BatchNormSpec {
            mode,
            momentum: self.bn_momentum,
            eps: self.bn_eps,
        }
    }
}

/// Input samples influencing one output frame of the mask estimator.
pub fn receptive_field(cfg: &MaskerConfig) -> usize {
    let per_repeat: usize = (0..cfg.blocks_per_repeat)
        .map(|i| (cfg.kernel - 1) << i)
        .sum();
    let frames = 1 + cfg.repeats * per_repeat;
    (frames - 1) * cfg.stride + cfg.kernel_len
}

/// Encoder output together with its framing.
#[derive(Clone, Copy, Debug)]
pub struct LatentFrames {
    /// `[batch, n_filters, frames]`.
    pub tensor: Var,
    pub frame_stride: usize,
    pub frame_len: usize,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    stats: StatsId,
}

#[derive(Clone, Debug)]
struct Block {
    conv_in: Conv,
    norm1: Norm,
    depthwise: Conv,
    norm2: Norm,
    /// Absent in the final block, whose residual output would feed nothing.
    residual: Option<Conv>,
    skip: Conv,
    dilation: usize,
}

/// Intermediate tensors of a masking pass.
#[derive(Clone, Copy, Debug)]
pub struct MaskerTrace {
    pub latent: LatentFrames,
    pub mask: Var,
    pub masked: LatentFrames,
    /// `[batch, 1, samples]`.
    pub estimate: Var,
}

/// Parameter layout of one masking network inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Masker {
    pub cfg: MaskerConfig,
    encoder: ParamId,
    bottleneck: Conv,
    blocks: Vec<Block>,
    output: Conv,
    decoder: ParamId,
}

fn conv_param<F: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<F>,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    bias: bool,
    rng: &mut R,
) -> Result<Conv, DiffError> {
    let init = InitSpec::GlorotUniform {
        fan_in: c_in * k,
        fan_out: c_out * k,
    };
    let w = store.add(format!("{name}.weight"), &[c_out, c_in, k], init, rng)?;
    let b = if bias {
        Some(store.add(format!("{name}.bias"), &[c_out], InitSpec::Constant(0.0), rng)?)
    } else {
        None
    };
    Ok(Conv { w, b })
}

fn norm_param<F: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<F>,
    name: &str,
    ch: usize,
    rng: &mut R,
) -> Result<Norm, DiffError> {
    Ok(Norm {
        gamma: store.add(format!("{name}.gamma"), &[ch], InitSpec::Constant(1.0), rng)?,
        beta: store.add(format!("{name}.beta"), &[ch], InitSpec::Constant(0.0), rng)?,
        stats: store.add_stats(format!("{name}.running"), ch)?,
    })
}

fn apply_conv<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    conv: Conv,
    x: Var,
    spec: Conv1dSpec,
) -> Result<Var, DiffError> {
    let w = g.param(store, conv.w);
    let b = conv.b.map(|b| g.param(store, b));
    g.conv1d(x, w, b, spec)
}

fn apply_norm<F: Real>(
    g: &mut Graph<F>,
    store: &mut ParamStore<F>,
    norm: Norm,
    x: Var,
    spec: BatchNormSpec,
) -> Result<Var, DiffError> {
    let gamma = g.param(store, norm.gamma);
    let beta = g.param(store, norm.beta);
    g.batch_norm(x, gamma, beta, store.stats_mut(norm.stats), spec)
}

impl Masker {
    pub fn new<F: Real, R: Rng + ?Sized>(
        cfg: MaskerConfig,
        prefix: &str,
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let p = |s: &str| format!("{prefix}.{s}");
        let (n, b, h, sc) = (cfg.n_filters, cfg.bottleneck, cfg.conv_channels, cfg.skip_channels);
        let l = cfg.kernel_len;
        let encoder = store.add(
            p("encoder.weight"),
            &[n, 1, l],
            InitSpec::GlorotUniform { fan_in: l, fan_out: n * l },
            rng,
        )?;
        let bottleneck = conv_param(store, &p("bottleneck"), b, n, 1, true, rng)?;
        let total = cfg.repeats * cfg.blocks_per_repeat;
        let mut blocks = Vec::with_capacity(total);
        for r in 0..cfg.repeats {
            for x in 0..cfg.blocks_per_repeat {
                let last = blocks.len() + 1 == total;
                let name = p(&format!("blocks.{r}.{x}"));
                blocks.push(Block {
                    conv_in: conv_param(store, &format!("{name}.conv_in"), h, b, 1, true, rng)?,
                    norm1: norm_param(store, &format!("{name}.norm1"), h, rng)?,
                    depthwise: conv_param(store, &format!("{name}.depthwise"), h, 1, cfg.kernel, true, rng)?,
                    norm2: norm_param(store, &format!("{name}.norm2"), h, rng)?,
                    residual: if last {
                        None
                    } else {
                        Some(conv_param(store, &format!("{name}.residual"), b, h, 1, true, rng)?)
                    },
                    skip: conv_param(store, &format!("{name}.skip"), sc, h, 1, true, rng)?,
                    dilation: 1 << x,
                });
            }
        }
        let output = conv_param(store, &p("mask_out"), n, sc, 1, true, rng)?;
        // Transposed-conv weight layout is [in, out, k].
        let decoder = store.add(
            p("decoder.weight"),
            &[n, 1, l],
            InitSpec::GlorotUniform { fan_in: n * l, fan_out: l },
            rng,
        )?;
        Ok(Self {
            cfg,
            encoder,
            bottleneck,
            blocks,
            output,
            decoder,
        })
    }

    /// Parameter id of the final 1x1 convolution producing mask logits.
    pub fn mask_output_weight(&self) -> ParamId {
        self.output.w
    }

    pub fn mask_output_bias(&self) -> Option<ParamId> {
        self.output.b
    }

    /// Linear strided encoder, no bias.
    pub fn encode<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<LatentFrames, ModelError> {
        let (_, ch, t) = g.value(x).dims3("encode")?;
        if ch != 1 {
            return Err(ModelError::Shape(format!("encoder expects mono input, got {ch} channels")));
        }
        if t < self.cfg.kernel_len {
            return Err(ModelError::Shape(format!(
                "input of {t} samples is shorter than one {}-sample frame",
                self.cfg.kernel_len
            )));
        }
        let w = g.param(store, self.encoder);
        let spec = Conv1dSpec {
            stride: self.cfg.stride,
            ..Default::default()
        };
        Ok(LatentFrames {
            tensor: g.conv1d(x, w, None, spec)?,
            frame_stride: self.cfg.stride,
            frame_len: self.cfg.kernel_len,
        })
    }

    /// Mask in (0, 1) with the latent's shape.
    pub fn estimate_mask<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &mut ParamStore<F>,
        latent: &LatentFrames,
        mode: NormMode,
    ) -> Result<Var, ModelError> {
        let cfg = &self.cfg;
        let (_, ch, _) = g.value(latent.tensor).dims3("estimate_mask")?;
        if ch != cfg.n_filters {
            return Err(ModelError::Shape(format!(
                "latent has {ch} channels, masker expects {}",
                cfg.n_filters
            )));
        }
        let slope = cfg.leaky_slope;
        let bn = cfg.bn(mode);
        let pointwise = Conv1dSpec::default();
        let mut h = apply_conv(g, store, self.bottleneck, latent.tensor, pointwise)?;
        let mut skip_sum: Option<Var> = None;
        for block in &self.blocks {
            let mut y = apply_conv(g, store, block.conv_in, h, pointwise)?;
            y = g.leaky_relu(y, slope);
            y = apply_norm(g, store, block.norm1, y, bn)?;
            let dw = Conv1dSpec {
                dilation: block.dilation,
                groups: cfg.conv_channels,
                padding: Padding::Same,
                ..Default::default()
            };
            y = apply_conv(g, store, block.depthwise, y, dw)?;
            y = g.leaky_relu(y, slope);
            y = apply_norm(g, store, block.norm2, y, bn)?;
            if let Some(residual) = block.residual {
                let res = apply_conv(g, store, residual, y, pointwise)?;
                h = g.add(h, res)?;
            }
            let skip = apply_conv(g, store, block.skip, y, pointwise)?;
            skip_sum = Some(match skip_sum {
                Some(s) => g.add(s, skip)?,
                None => skip,
            });
        }
        let s = skip_sum.expect("at least one block");
        let s = g.leaky_relu(s, slope);
        let logits = apply_conv(g, store, self.output, s, pointwise)?;
        Ok(g.sigmoid(logits))
    }

    pub fn apply_mask<F: Real>(
        &self,
        g: &mut Graph<F>,
        latent: &LatentFrames,
        mask: Var,
    ) -> Result<LatentFrames, ModelError> {
        Ok(LatentFrames {
            tensor: g.mul(latent.tensor, mask)?,
            ..*latent
        })
    }

    /// Linear transposed-conv decoder to `[batch, 1, (frames - 1) * stride + L]`.
    pub fn decode<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        latent: &LatentFrames,
    ) -> Result<Var, ModelError> {
        let (_, ch, _) = g.value(latent.tensor).dims3("decode")?;
        if ch != self.cfg.n_filters {
            return Err(ModelError::Shape(format!(
                "latent has {ch} channels, decoder expects {}",
                self.cfg.n_filters
            )));
        }
        let w = g.param(store, self.decoder);
        Ok(g.conv_transpose1d(latent.tensor, w, None, self.cfg.stride)?)
    }

    /// Encode once, estimate and apply the mask, decode. Output length is
    /// `(frames - 1) * stride + L`, equal to the input length when the input
    /// tiles exactly into frames (e.g. 16384 samples with L = 16, stride 8).
    pub fn mask_and_decode<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &mut ParamStore<F>,
        x: Var,
        mode: NormMode,
    ) -> Result<MaskerTrace, ModelError> {
        let latent = self.encode(g, store, x)?;
        let mask = self.estimate_mask(g, store, &latent, mode)?;
        let masked = self.apply_mask(g, &latent, mask)?;
        let estimate = self.decode(g, store, &masked)?;
        Ok(MaskerTrace {
            latent,
            mask,
            masked,
            estimate,
        })
    }
}
