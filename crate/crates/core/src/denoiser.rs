//! Multi-resolution denoiser: a 1-D U-Net whose bottleneck is either two
//! bidirectional LSTM layers or a plain convolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{
    Conv1dSpec, DiffError, Graph, InitSpec, LstmVars, Padding, ParamId, ParamStore, Real, Var,
};
use crate::model::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bottleneck {
    /// Stacked bidirectional LSTMs; `hidden` units per direction.
    Recurrent { layers: usize, hidden: usize },
    /// One `kernel`-wide convolution to `growth * (depth + 1)` channels.
    Convolutional { kernel: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub depth: usize,
    pub growth: usize,
    pub kernel_down: usize,
    pub kernel_up: usize,
    pub bottleneck: Bottleneck,
    pub leaky_slope: f64,
}

impl DenoiserConfig {
    /// Halved-width denoiser with a recurrent bottleneck of 168 units per
    /// bidirectional layer.
    pub fn htmd() -> Self {
        Self {
            depth: 12,
            growth: 12,
            kernel_down: 15,
            kernel_up: 5,
            bottleneck: Bottleneck::Recurrent {
                layers: 2,
                hidden: 84,
            },
            leaky_slope: 0.3,
        }
    }

    /// Wave-U-Net baseline.
    pub fn wave_u_net() -> Self {
        Self {
            growth: 24,
            bottleneck: Bottleneck::Convolutional { kernel: 15 },
            ..Self::htmd()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth == 0 || self.growth == 0 || self.kernel_down == 0 || self.kernel_up == 0 {
            return Err(ModelError::Config("denoiser sizes must all be positive".into()));
        }
        match self.bottleneck {
            Bottleneck::Recurrent { layers, hidden } if layers == 0 || hidden == 0 => {
                Err(ModelError::Config("recurrent bottleneck needs layers and hidden > 0".into()))
            }
            Bottleneck::Convolutional { kernel: 0 } => {
                Err(ModelError::Config("bottleneck kernel must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Channels produced by encoder (and decoder) level `level`, 1-based.
    pub fn level_channels(&self, level: usize) -> usize {
        self.growth * level
    }

    fn bottleneck_channels(&self) -> usize {
        match self.bottleneck {
            Bottleneck::Recurrent { .. } => self.growth * self.depth,
            Bottleneck::Convolutional { .. } => self.growth * (self.depth + 1),
        }
    }

    pub fn check_len(&self, t: usize) -> Result<(), ModelError> {
        let unit = 1usize << self.depth;
        if t == 0 || t % unit != 0 {
            return Err(ModelError::Shape(format!(
                "denoiser input length {t} is not a positive multiple of 2^{} = {unit}",
                self.depth
            )));
        }
        Ok(())
    }
}

/// `(level, time_len, channels)` of every stored skip connection.
pub fn skip_shapes(cfg: &DenoiserConfig, t: usize) -> Result<Vec<(usize, usize, usize)>, ModelError> {
    cfg.check_len(t)?;
    Ok((1..=cfg.depth)
        .map(|i| (i, t >> (i - 1), cfg.level_channels(i)))
        .collect())
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
enum BottleneckLayout {
    Recurrent {
        layers: Vec<(Lstm, Lstm)>,
        adapter: Conv,
    },
    Convolutional(Conv),
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    down: Vec<Conv>,
    bottleneck: BottleneckLayout,
    /// Indexed by level - 1.
    up: Vec<Conv>,
    output: Conv,
}

fn conv_param<F: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<F>,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut R,
) -> Result<Conv, DiffError> {
    let init = InitSpec::GlorotUniform {
        fan_in: c_in * k,
        fan_out: c_out * k,
    };
    Ok(Conv {
        w: store.add(format!("{name}.weight"), &[c_out, c_in, k], init, rng)?,
        b: store.add(format!("{name}.bias"), &[c_out], InitSpec::Constant(0.0), rng)?,
    })
}

fn lstm_param<F: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<F>,
    name: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<Lstm, DiffError> {
    let h4 = 4 * hidden;
    Ok(Lstm {
        w_ih: store.add(
            format!("{name}.w_ih"),
            &[h4, input],
            InitSpec::GlorotUniform { fan_in: input, fan_out: h4 },
            rng,
        )?,
        w_hh: store.add(
            format!("{name}.w_hh"),
            &[h4, hidden],
            InitSpec::GlorotUniform { fan_in: hidden, fan_out: h4 },
            rng,
        )?,
        bias: store.add(
            format!("{name}.bias"),
            &[h4],
            InitSpec::LstmBias { hidden, forget: 1.0 },
            rng,
        )?,
    })
}

fn apply_conv<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    conv: Conv,
    x: Var,
    padding: Padding,
) -> Result<Var, DiffError> {
    let w = g.param(store, conv.w);
    let b = g.param(store, conv.b);
    let spec = Conv1dSpec {
        padding,
        ..Default::default()
    };
    g.conv1d(x, w, Some(b), spec)
}

fn lstm_vars<F: Real>(g: &mut Graph<F>, store: &ParamStore<F>, l: Lstm) -> LstmVars {
    LstmVars {
        w_ih: g.param(store, l.w_ih),
        w_hh: g.param(store, l.w_hh),
        bias: g.param(store, l.bias),
    }
}

impl Denoiser {
    pub fn new<F: Real, R: Rng + ?Sized>(
        cfg: DenoiserConfig,
        prefix: &str,
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let p = |s: &str| format!("{prefix}.{s}");
        let mut down = Vec::with_capacity(cfg.depth);
        let mut c_in = 1;
        for level in 1..=cfg.depth {
            let c_out = cfg.level_channels(level);
            down.push(conv_param(store, &p(&format!("down.{level}")), c_out, c_in, cfg.kernel_down, rng)?);
            c_in = c_out;
        }
        let deepest = cfg.level_channels(cfg.depth);
        let bottleneck = match cfg.bottleneck {
            Bottleneck::Recurrent { layers, hidden } => {
                let mut stack = Vec::with_capacity(layers);
                let mut input = deepest;
                for l in 0..layers {
                    let fwd = lstm_param(store, &p(&format!("lstm.{l}.fwd")), input, hidden, rng)?;
                    let bwd = lstm_param(store, &p(&format!("lstm.{l}.bwd")), input, hidden, rng)?;
                    stack.push((fwd, bwd));
                    input = 2 * hidden;
                }
                let adapter = conv_param(store, &p("lstm.adapter"), deepest, 2 * hidden, 1, rng)?;
                BottleneckLayout::Recurrent {
                    layers: stack,
                    adapter,
                }
            }
            Bottleneck::Convolutional { kernel } => BottleneckLayout::Convolutional(conv_param(
                store,
                &p("bottleneck"),
                cfg.bottleneck_channels(),
                deepest,
                kernel,
                rng,
            )?),
        };
        let mut up = Vec::with_capacity(cfg.depth);
        for level in 1..=cfg.depth {
            let below = if level == cfg.depth {
                cfg.bottleneck_channels()
            } else {
                cfg.level_channels(level + 1)
            };
            let c_out = cfg.level_channels(level);
            up.push(conv_param(
                store,
                &p(&format!("up.{level}")),
                c_out,
                below + c_out,
                cfg.kernel_up,
                rng,
            )?);
        }
        // The raw input is concatenated before the output projection.
        let output = conv_param(store, &p("output"), 1, cfg.growth + 1, 1, rng)?;
        Ok(Self {
            cfg,
            down,
            bottleneck,
            up,
            output,
        })
    }

    /// `[batch, 1, T] -> [batch, 1, T]` with values in (-1, 1).
    pub fn denoise<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var, ModelError> {
        let cfg = &self.cfg;
        let (_, ch, t) = g.value(x).dims3("denoise")?;
        if ch != 1 {
            return Err(ModelError::Shape(format!("denoiser expects one channel, got {ch}")));
        }
        cfg.check_len(t)?;
        let slope = cfg.leaky_slope;
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut h = x;
        for conv in &self.down {
            let y = apply_conv(g, store, *conv, h, Padding::Same)?;
            let y = g.leaky_relu(y, slope);
            skips.push(y);
            h = g.decimate(y)?;
        }
        h = match &self.bottleneck {
            BottleneckLayout::Recurrent { layers, adapter } => {
                let mut seq = g.transpose12(h)?;
                for (i, (fwd, bwd)) in layers.iter().enumerate() {
                    let f = lstm_vars(g, store, *fwd);
                    let b = lstm_vars(g, store, *bwd);
                    seq = g.bilstm(seq, f, b)?;
                    if i + 1 == layers.len() {
                        seq = g.leaky_relu(seq, slope);
                    }
                }
                let y = g.transpose12(seq)?;
                apply_conv(g, store, *adapter, y, Padding::Valid)?
            }
            BottleneckLayout::Convolutional(conv) => {
                let y = apply_conv(g, store, *conv, h, Padding::Same)?;
                g.leaky_relu(y, slope)
            }
        };
        for (conv, skip) in self.up.iter().zip(&skips).rev() {
            let u = g.upsample_linear(h)?;
            let cat = g.concat(&[u, *skip], 1)?;
            let y = apply_conv(g, store, *conv, cat, Padding::Same)?;
            h = g.leaky_relu(y, slope);
        }
        let cat = g.concat(&[h, x], 1)?;
        let y = apply_conv(g, store, self.output, cat, Padding::Valid)?;
        Ok(g.tanh(y))
    }
}
