use std::collections::HashMap;

use super::conv::{self, ConvGeom, ConvTGeom};
use super::lstm::{self, LstmCache, LstmGeom, LstmGrads};
use super::{DiffError, ParamId, ParamStore, Real, RunningStats, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Pad `dilation * (k - 1)` zeros split left/right (extra on the right) so a
    /// stride-1 convolution preserves length.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            groups: 1,
            padding: Padding::Valid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormSpec {
    pub mode: NormMode,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormSpec {
    pub fn new(mode: NormMode) -> Self {
        Self {
            mode,
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Parameter handles of one recurrent direction.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvT {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvTGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        train: bool,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    LeakyRelu {
        x: Var,
        slope: F,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Lstm {
        x: Var,
        vars: LstmVars,
        geom: LstmGeom,
        cache: LstmCache<F>,
    },
    Decimate {
        x: Var,
    },
    Upsample {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
        outer: usize,
        inner: usize,
        sizes: Vec<usize>,
    },
    Transpose12 {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: F,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Mae {
        a: Var,
        b: Var,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Reverse-mode tape. Every op appends a node; [`Graph::backward`] walks the
/// tape in reverse accumulating gradients for nodes that need them.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
    params: HashMap<ParamId, Var>,
    frozen: Option<FrozenKinks>,
}

struct FrozenKinks {
    pattern: Vec<bool>,
    cursor: usize,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            frozen: None,
        }
    }

    /// Graph whose piecewise-linear ops take their branch from `pattern` (as
    /// returned by [`Graph::kink_pattern`] of a reference pass) instead of
    /// the sign of their input. Forward values then follow the smooth piece
    /// of the reference point. Meant for finite-difference probes; backward
    /// still uses the actual signs.
    pub fn with_frozen_kinks(pattern: Vec<bool>) -> Self {
        Self {
            frozen: Some(FrozenKinks { pattern, cursor: 0 }),
            ..Self::new()
        }
    }

    /// Branch bits for the next `n` piecewise elements, or `None` when not
    /// frozen.
    fn take_kinks(&mut self, n: usize) -> Result<Option<Vec<bool>>, DiffError> {
        let Some(f) = self.frozen.as_mut() else {
            return Ok(None);
        };
        let end = f.cursor + n;
        if end > f.pattern.len() {
            return Err(DiffError::invalid("frozen kinks", "pattern shorter than the graph's piecewise ops"));
        }
        let bits = f.pattern[f.cursor..end].to_vec();
        f.cursor = end;
        Ok(Some(bits))
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Free variable whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a store parameter once per graph; repeated calls share the node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).value.clone());
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds the gradients of every recorded parameter into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<F>) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }

    /// Sign pattern of every piecewise-linear op input (leaky_relu inputs and
    /// mae residuals). Two points with equal patterns lie on the same smooth
    /// piece, up to sign flips that cancel in between.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } => {
                    out.extend(self.value(*x).data().iter().map(|&v| v > F::zero()));
                }
                Op::Mae { a, b } => {
                    let (a, b) = (self.value(*a).data(), self.value(*b).data());
                    out.extend(a.iter().zip(b).map(|(&p, &q)| p > q));
                }
                _ => {}
            }
        }
        out
    }

    fn check_finite(&self, v: Var, op: &'static str) -> Result<Var, DiffError> {
        if self.nodes[v.0].value.all_finite() {
            Ok(v)
        } else {
            Err(DiffError::NonFinite(op))
        }
    }

    // ---------------------------------------------------------------- ops

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv1dSpec) -> Result<Var, DiffError> {
        const OP: &str = "conv1d";
        let (batch, c_in, t_in) = self.value(x).dims3(OP)?;
        let (c_out, cin_g, kernel) = self.value(w).dims3(OP)?;
        if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
            return Err(DiffError::invalid(OP, "stride, dilation and groups must be positive"));
        }
        if c_in % spec.groups != 0 || c_out % spec.groups != 0 || cin_g != c_in / spec.groups {
            return Err(DiffError::shape(
                OP,
                format!(
                    "input channels {c_in}, weight {:?}, groups {}",
                    self.shape(w),
                    spec.groups
                ),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(DiffError::shape(OP, format!("bias shape {:?}, expected [{c_out}]", self.shape(b))));
            }
        }
        let (pad_left, pad_total) = match spec.padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = spec.dilation * (kernel - 1);
                (total / 2, total)
            }
        };
        let t_out = conv::conv_out_len(t_in, pad_total, kernel, spec.stride, spec.dilation)?;
        let geom = ConvGeom {
            batch,
            c_in,
            c_out,
            t_in,
            t_out,
            kernel,
            stride: spec.stride,
            dilation: spec.dilation,
            groups: spec.groups,
            pad_left,
        };
        let mut y = vec![F::zero(); batch * c_out * t_out];
        conv::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut y,
        );
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        let out = self.push(Tensor::new(vec![batch, c_out, t_out], y)?, Op::Conv1d { x, w, b, geom }, needs);
        Ok(out)
    }

    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var, DiffError> {
        const OP: &str = "conv_transpose1d";
        if stride == 0 {
            return Err(DiffError::invalid(OP, "stride must be positive"));
        }
        let (batch, c_in, t_in) = self.value(x).dims3(OP)?;
        let (w_in, c_out, kernel) = self.value(w).dims3(OP)?;
        if w_in != c_in || t_in == 0 {
            return Err(DiffError::shape(
                OP,
                format!("input {:?} vs weight {:?}", self.shape(x), self.shape(w)),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(DiffError::shape(OP, format!("bias shape {:?}", self.shape(b))));
            }
        }
        let t_out = (t_in - 1) * stride + kernel;
        let geom = ConvTGeom {
            batch,
            c_in,
            c_out,
            t_in,
            t_out,
            kernel,
            stride,
        };
        let mut y = vec![F::zero(); batch * c_out * t_out];
        conv::conv_transpose1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut y,
        );
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(Tensor::new(vec![batch, c_out, t_out], y)?, Op::ConvT { x, w, b, geom }, needs))
    }

    /// Per-channel normalization of `[batch, channels, time]`. In train mode the
    /// batch statistics are used and `stats` is updated with `spec.momentum`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<F>,
        spec: BatchNormSpec,
    ) -> Result<Var, DiffError> {
        const OP: &str = "batch_norm";
        let (batch, ch, t) = self.value(x).dims3(OP)?;
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] || stats.mean.len() != ch {
            return Err(DiffError::shape(OP, format!("{ch} channels vs affine/stat sizes")));
        }
        let m = batch * t;
        let train = spec.mode == NormMode::Train;
        if train && m < 2 {
            return Err(DiffError::invalid(OP, "train mode needs batch * time > 1"));
        }
        let eps = F::of(spec.eps);
        let xs = self.value(x).data();
        let mut inv_std = vec![F::zero(); ch];
        let mut xhat = vec![F::zero(); xs.len()];
        for c in 0..ch {
            let (mean, var) = if train {
                let mut sum = 0.0f64;
                for b in 0..batch {
                    sum += xs[(b * ch + c) * t..(b * ch + c + 1) * t].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut sq = 0.0f64;
                for b in 0..batch {
                    sq += xs[(b * ch + c) * t..(b * ch + c + 1) * t]
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / m as f64;
                let mo = spec.momentum;
                stats.mean[c] = F::of((1.0 - mo) * stats.mean[c].as_f64() + mo * mean);
                let unbiased = sq / (m - 1) as f64;
                stats.var[c] = F::of((1.0 - mo) * stats.var[c].as_f64() + mo * unbiased);
                (F::of(mean), F::of(var))
            } else {
                (stats.mean[c], stats.var[c])
            };
            let is = F::one() / (var + eps).sqrt();
            inv_std[c] = is;
            for b in 0..batch {
                let r = (b * ch + c) * t..(b * ch + c + 1) * t;
                for (h, &v) in xhat[r.clone()].iter_mut().zip(&xs[r]) {
                    *h = (v - mean) * is;
                }
            }
        }
        let gs = self.value(gamma).data();
        let bs = self.value(beta).data();
        let mut y = xhat.clone();
        for b in 0..batch {
            for c in 0..ch {
                for v in &mut y[(b * ch + c) * t..(b * ch + c + 1) * t] {
                    *v = *v * gs[c] + bs[c];
                }
            }
        }
        let needs = self.needs(&[x, gamma, beta]);
        let out = self.push(
            Tensor::new(vec![batch, ch, t], y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                train,
                xhat,
                inv_std,
            },
            needs,
        );
        Ok(out)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = F::of(slope);
        let n = self.value(x).len();
        let y = match self.take_kinks(n).expect("frozen kink pattern matches graph") {
            None => self.value(x).map(|v| if v > F::zero() { v } else { v * slope }),
            Some(bits) => {
                let mut y = self.value(x).clone();
                for (v, pos) in y.data_mut().iter_mut().zip(bits) {
                    if !pos {
                        *v = *v * slope;
                    }
                }
                y
            }
        };
        let needs = self.needs(&[x]);
        self.push(y, Op::LeakyRelu { x, slope }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(lstm::sigmoid);
        let needs = self.needs(&[x]);
        self.push(y, Op::Sigmoid { x }, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        let needs = self.needs(&[x]);
        self.push(y, Op::Tanh { x }, needs)
    }

    /// One recurrent direction over `[batch, time, features]`; weights are
    /// `w_ih [4h, features]`, `w_hh [4h, h]`, `bias [4h]`.
    pub fn lstm(&mut self, x: Var, vars: LstmVars, reverse: bool) -> Result<Var, DiffError> {
        const OP: &str = "lstm";
        let (batch, time, input) = self.value(x).dims3(OP)?;
        if time == 0 {
            return Err(DiffError::invalid(OP, "empty time axis"));
        }
        let w_ih = self.shape(vars.w_ih).to_vec();
        let w_hh = self.shape(vars.w_hh).to_vec();
        let hidden = w_hh.get(1).copied().unwrap_or(0);
        if w_ih != [4 * hidden, input] || w_hh != [4 * hidden, hidden] || self.shape(vars.bias) != [4 * hidden] {
            return Err(DiffError::shape(
                OP,
                format!("features {input}, w_ih {w_ih:?}, w_hh {w_hh:?}"),
            ));
        }
        let geom = LstmGeom {
            batch,
            time,
            input,
            hidden,
            reverse,
        };
        let mut y = vec![F::zero(); batch * time * hidden];
        let cache = lstm::lstm_forward(
            &geom,
            self.value(x).data(),
            self.value(vars.w_ih).data(),
            self.value(vars.w_hh).data(),
            self.value(vars.bias).data(),
            &mut y,
        );
        let needs = self.needs(&[x, vars.w_ih, vars.w_hh, vars.bias]);
        Ok(self.push(
            Tensor::new(vec![batch, time, hidden], y)?,
            Op::Lstm { x, vars, geom, cache },
            needs,
        ))
    }

    /// Forward and backward directions concatenated on the feature axis.
    pub fn bilstm(&mut self, x: Var, fwd: LstmVars, bwd: LstmVars) -> Result<Var, DiffError> {
        let f = self.lstm(x, fwd, false)?;
        let b = self.lstm(x, bwd, true)?;
        self.concat(&[f, b], 2)
    }

    /// Keeps even time indices of `[batch, channels, time]`.
    pub fn decimate(&mut self, x: Var) -> Result<Var, DiffError> {
        let (b, c, t) = self.value(x).dims3("decimate")?;
        if t < 2 {
            return Err(DiffError::invalid("decimate", "time axis shorter than 2"));
        }
        let t_out = t.div_ceil(2);
        let xs = self.value(x).data();
        let mut y = Vec::with_capacity(b * c * t_out);
        for row in xs.chunks(t) {
            y.extend(row.iter().step_by(2).copied());
        }
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![b, c, t_out], y)?, Op::Decimate { x }, needs))
    }

    /// Doubles the time axis by linear interpolation, repeating the final sample.
    pub fn upsample_linear(&mut self, x: Var) -> Result<Var, DiffError> {
        let (b, c, t) = self.value(x).dims3("upsample_linear")?;
        if t == 0 {
            return Err(DiffError::invalid("upsample_linear", "empty time axis"));
        }
        let half = F::of(0.5);
        let xs = self.value(x).data();
        let mut y = Vec::with_capacity(b * c * 2 * t);
        for row in xs.chunks(t) {
            for i in 0..t {
                y.push(row[i]);
                let next = if i + 1 < t { row[i + 1] } else { row[i] };
                y.push(if i + 1 < t { (row[i] + next) * half } else { row[i] });
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![b, c, 2 * t], y)?, Op::Upsample { x }, needs))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, DiffError> {
        const OP: &str = "concat";
        let first = xs
            .first()
            .ok_or_else(|| DiffError::invalid(OP, "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(DiffError::invalid(OP, format!("axis {axis} out of range for {base:?}")));
        }
        let mut sizes = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(DiffError::shape(OP, format!("{base:?} vs {s:?} along axis {axis}")));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut y = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &sz) in xs.iter().zip(&sizes) {
                let d = self.value(v).data();
                y.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let needs = self.needs(xs);
        Ok(self.push(
            Tensor::new(shape, y)?,
            Op::Concat {
                xs: xs.to_vec(),
                outer,
                inner,
                sizes,
            },
            needs,
        ))
    }

    /// `[a, b, c] -> [a, c, b]`.
    pub fn transpose12(&mut self, x: Var) -> Result<Var, DiffError> {
        let (a, b, c) = self.value(x).dims3("transpose12")?;
        let y = transpose_last2(self.value(x).data(), a, b, c);
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![a, c, b], y)?, Op::Transpose12 { x }, needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let av = self.value(a);
        let data = av.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        let y = self.zip_with(a, b, |x, y| x + y);
        let needs = self.needs(&[a, b]);
        Ok(self.push(y, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sub", a, b)?;
        let y = self.zip_with(a, b, |x, y| x - y);
        let needs = self.needs(&[a, b]);
        Ok(self.push(y, Op::Sub { a, b }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        let y = self.zip_with(a, b, |x, y| x * y);
        let needs = self.needs(&[a, b]);
        Ok(self.push(y, Op::Mul { a, b }, needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = F::of(c);
        let y = self.value(x).map(|v| v * c);
        let needs = self.needs(&[x]);
        self.push(y, Op::Scale { x, c }, needs)
    }

    /// Affine map of the last axis: `y = x W^T + b` with `W [out, in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        const OP: &str = "dense";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let Some((&n_in, lead)) = xs.split_last() else {
            return Err(DiffError::invalid(OP, "scalar input"));
        };
        if ws.len() != 2 || ws[1] != n_in {
            return Err(DiffError::shape(OP, format!("input {xs:?} vs weight {ws:?}")));
        }
        let n_out = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [n_out] {
                return Err(DiffError::shape(OP, format!("bias {:?}", self.shape(b))));
            }
        }
        let rows: usize = lead.iter().product();
        let mut y = vec![F::zero(); rows * n_out];
        F::gemm(false, true, rows, n_out, n_in, F::one(), self.value(x).data(), self.value(w).data(), F::zero(), &mut y);
        if let Some(b) = b {
            let bs = self.value(b).data();
            for row in y.chunks_mut(n_out) {
                for (v, &bv) in row.iter_mut().zip(bs) {
                    *v += bv;
                }
            }
        }
        let mut shape = lead.to_vec();
        shape.push(n_out);
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(Tensor::new(shape, y)?, Op::Dense { x, w, b, rows }, needs))
    }

    /// Mean squared difference as a one-element tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).as_f64().powi(2))
            .sum();
        let needs = self.needs(&[a, b]);
        let out = self.push(Tensor::scalar(F::of(s / n)), Op::Mse { a, b }, needs);
        self.check_finite(out, "mse")
    }

    /// Mean absolute difference as a one-element tensor.
    pub fn mae(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mae", a, b)?;
        let n = self.value(a).len().max(1) as f64;
        let bits = self.take_kinks(self.value(a).len())?;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .enumerate()
            .map(|(i, (&x, &y))| {
                let d = (x - y).as_f64();
                match &bits {
                    Some(bits) if bits[i] => d,
                    Some(_) => -d,
                    None => d.abs(),
                }
            })
            .sum();
        let needs = self.needs(&[a, b]);
        let out = self.push(Tensor::scalar(F::of(s / n)), Op::Mae { a, b }, needs);
        self.check_finite(out, "mae")
    }

    // ----------------------------------------------------------- backward

    /// Backpropagates from a one-element output.
    pub fn backward(&mut self, out: Var) -> Result<(), DiffError> {
        if self.value(out).len() != 1 {
            return Err(DiffError::shape(
                "backward",
                format!("expected a scalar output, got {:?}", self.shape(out)),
            ));
        }
        let seed = Tensor::full(self.shape(out), F::one());
        self.backward_with(out, seed)
    }

    /// Backpropagates an arbitrary cotangent `seed` (same shape as `out`).
    pub fn backward_with(&mut self, out: Var, seed: Tensor<F>) -> Result<(), DiffError> {
        if seed.shape() != self.shape(out) {
            return Err(DiffError::shape("backward", "seed shape differs from output".to_string()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            if !dy.all_finite() {
                return Err(DiffError::NonFinite("backward"));
            }
            self.backprop_node(idx, &dy);
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }

    fn grad_buf(&mut self, v: Var) -> Option<&mut [F]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        Some(
            self.grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(&shape))
                .data_mut(),
        )
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [F])) {
        if let Some(buf) = self.grad_buf(v) {
            f(buf);
        }
    }

    fn backprop_node(&mut self, idx: usize, dy: &Tensor<F>) {
        // Temporarily detach the op so that node values can be read while
        // gradient buffers are mutated.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let dyd = dy.data();
        match &op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                let (x, w, b, geom) = (*x, *w, *b, *geom);
                let xv = self.nodes[x.0].value.data().to_vec();
                let wv = self.nodes[w.0].value.data().to_vec();
                let mut dx = self.take_grad(x);
                let mut dw = self.take_grad(w);
                let mut db = b.and_then(|b| self.take_grad(b));
                conv::conv1d_backward(&geom, &xv, &wv, dyd, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                self.restore_grad(x, dx);
                self.restore_grad(w, dw);
                if let Some(b) = b {
                    self.restore_grad(b, db);
                }
            }
            Op::ConvT { x, w, b, geom } => {
                let (x, w, b, geom) = (*x, *w, *b, *geom);
                let xv = self.nodes[x.0].value.data().to_vec();
                let wv = self.nodes[w.0].value.data().to_vec();
                let mut dx = self.take_grad(x);
                let mut dw = self.take_grad(w);
                let mut db = b.and_then(|b| self.take_grad(b));
                conv::conv_transpose1d_backward(&geom, &xv, &wv, dyd, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                self.restore_grad(x, dx);
                self.restore_grad(w, dw);
                if let Some(b) = b {
                    self.restore_grad(b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                train,
                xhat,
                inv_std,
            } => {
                let (b_n, ch, t) = self.nodes[x.0].value.dims3("batch_norm").expect("3-d");
                let m = (b_n * t) as f64;
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let mut sum_dy = vec![F::zero(); ch];
                let mut sum_dy_xhat = vec![F::zero(); ch];
                for b in 0..b_n {
                    for c in 0..ch {
                        let r = (b * ch + c) * t..(b * ch + c + 1) * t;
                        for (&d, &h) in dyd[r.clone()].iter().zip(&xhat[r]) {
                            sum_dy[c] += d;
                            sum_dy_xhat[c] += d * h;
                        }
                    }
                }
                self.accumulate(*gamma, |g| {
                    for (a, &v) in g.iter_mut().zip(&sum_dy_xhat) {
                        *a += v;
                    }
                });
                self.accumulate(*beta, |g| {
                    for (a, &v) in g.iter_mut().zip(&sum_dy) {
                        *a += v;
                    }
                });
                let train = *train;
                self.accumulate(*x, |g| {
                    let inv_m = F::of(1.0 / m);
                    for b in 0..b_n {
                        for c in 0..ch {
                            let scale = gv[c] * inv_std[c];
                            let r = (b * ch + c) * t..(b * ch + c + 1) * t;
                            for ((a, &d), &h) in g[r.clone()].iter_mut().zip(&dyd[r.clone()]).zip(&xhat[r]) {
                                if train {
                                    *a += scale * (d - inv_m * sum_dy[c] - h * inv_m * sum_dy_xhat[c]);
                                } else {
                                    *a += scale * d;
                                }
                            }
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let slope = *slope;
                let xv = self.nodes[x.0].value.data().to_vec();
                self.accumulate(*x, |g| {
                    for ((a, &d), &v) in g.iter_mut().zip(dyd).zip(&xv) {
                        *a += if v > F::zero() { d } else { d * slope };
                    }
                });
            }
            Op::Sigmoid { x } => {
                let yv = self.nodes[idx].value.data().to_vec();
                self.accumulate(*x, |g| {
                    for ((a, &d), &y) in g.iter_mut().zip(dyd).zip(&yv) {
                        *a += d * y * (F::one() - y);
                    }
                });
            }
            Op::Tanh { x } => {
                let yv = self.nodes[idx].value.data().to_vec();
                self.accumulate(*x, |g| {
                    for ((a, &d), &y) in g.iter_mut().zip(dyd).zip(&yv) {
                        *a += d * (F::one() - y * y);
                    }
                });
            }
            Op::Lstm { x, vars, geom, cache } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                let w_ih = self.nodes[vars.w_ih.0].value.data().to_vec();
                let w_hh = self.nodes[vars.w_hh.0].value.data().to_vec();
                let yv = self.nodes[idx].value.data().to_vec();
                let mut dx = self.take_grad(*x);
                let mut dwi = self.take_grad(vars.w_ih);
                let mut dwh = self.take_grad(vars.w_hh);
                let mut dbias = self.take_grad(vars.bias);
                lstm::lstm_backward(
                    geom,
                    cache,
                    &xv,
                    &w_ih,
                    &w_hh,
                    &yv,
                    dyd,
                    LstmGrads {
                        dx: dx.as_deref_mut(),
                        dw_ih: dwi.as_deref_mut(),
                        dw_hh: dwh.as_deref_mut(),
                        dbias: dbias.as_deref_mut(),
                    },
                );
                self.restore_grad(*x, dx);
                self.restore_grad(vars.w_ih, dwi);
                self.restore_grad(vars.w_hh, dwh);
                self.restore_grad(vars.bias, dbias);
            }
            Op::Decimate { x } => {
                let t_in = *self.nodes[x.0].value.shape().last().expect("3-d");
                let t_out = *dy.shape().last().expect("3-d");
                self.accumulate(*x, |g| {
                    for (grow, drow) in g.chunks_mut(t_in).zip(dyd.chunks(t_out)) {
                        for (i, &d) in drow.iter().enumerate() {
                            grow[2 * i] += d;
                        }
                    }
                });
            }
            Op::Upsample { x } => {
                let t = *self.nodes[x.0].value.shape().last().expect("3-d");
                let half = F::of(0.5);
                self.accumulate(*x, |g| {
                    for (grow, drow) in g.chunks_mut(t).zip(dyd.chunks(2 * t)) {
                        for i in 0..t {
                            grow[i] += drow[2 * i];
                            if i + 1 < t {
                                grow[i] += half * drow[2 * i + 1];
                                grow[i + 1] += half * drow[2 * i + 1];
                            } else {
                                grow[i] += drow[2 * i + 1];
                            }
                        }
                    }
                });
            }
            Op::Concat {
                xs,
                outer,
                inner,
                sizes,
            } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&v, &sz) in xs.iter().zip(sizes) {
                    let (outer, inner) = (*outer, *inner);
                    self.accumulate(v, |g| {
                        for o in 0..outer {
                            let src = &dyd[(o * total + offset) * inner..(o * total + offset + sz) * inner];
                            for (a, &d) in g[o * sz * inner..(o + 1) * sz * inner].iter_mut().zip(src) {
                                *a += d;
                            }
                        }
                    });
                    offset += sz;
                }
            }
            Op::Transpose12 { x } => {
                let (a, b, c) = self.nodes[x.0].value.dims3("transpose12").expect("3-d");
                let back = transpose_last2(dyd, a, c, b);
                self.accumulate(*x, |g| {
                    for (acc, &v) in g.iter_mut().zip(&back) {
                        *acc += v;
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(*a, |g| g.iter_mut().zip(dyd).for_each(|(x, &d)| *x += d));
                self.accumulate(*b, |g| g.iter_mut().zip(dyd).for_each(|(x, &d)| *x += d));
            }
            Op::Sub { a, b } => {
                self.accumulate(*a, |g| g.iter_mut().zip(dyd).for_each(|(x, &d)| *x += d));
                self.accumulate(*b, |g| g.iter_mut().zip(dyd).for_each(|(x, &d)| *x -= d));
            }
            Op::Mul { a, b } => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                self.accumulate(*a, |g| {
                    for ((x, &d), &o) in g.iter_mut().zip(dyd).zip(&bv) {
                        *x += d * o;
                    }
                });
                self.accumulate(*b, |g| {
                    for ((x, &d), &o) in g.iter_mut().zip(dyd).zip(&av) {
                        *x += d * o;
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accumulate(*x, |g| g.iter_mut().zip(dyd).for_each(|(a, &d)| *a += d * c));
            }
            Op::Dense { x, w, b, rows } => {
                let rows = *rows;
                let xv = self.nodes[x.0].value.data().to_vec();
                let wv = self.nodes[w.0].value.data().to_vec();
                let (n_out, n_in) = {
                    let s = self.nodes[w.0].value.shape();
                    (s[0], s[1])
                };
                self.accumulate(*x, |g| {
                    F::gemm(false, false, rows, n_in, n_out, F::one(), dyd, &wv, F::one(), g);
                });
                self.accumulate(*w, |g| {
                    F::gemm(true, false, n_out, n_in, rows, F::one(), dyd, &xv, F::one(), g);
                });
                if let Some(b) = b {
                    self.accumulate(*b, |g| {
                        for row in dyd.chunks(n_out) {
                            for (a, &d) in g.iter_mut().zip(row) {
                                *a += d;
                            }
                        }
                    });
                }
            }
            Op::Mse { a, b } | Op::Mae { a, b } => {
                let is_mse = matches!(op, Op::Mse { .. });
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                let n = F::of(av.len().max(1) as f64);
                let seed = dyd[0];
                let two = F::of(2.0);
                let diff: Vec<F> = av
                    .iter()
                    .zip(&bv)
                    .map(|(&x, &y)| {
                        let d = x - y;
                        let g = if is_mse {
                            two * d
                        } else if d > F::zero() {
                            F::one()
                        } else if d < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        };
                        seed * g / n
                    })
                    .collect();
                self.accumulate(*a, |g| g.iter_mut().zip(&diff).for_each(|(x, &d)| *x += d));
                self.accumulate(*b, |g| g.iter_mut().zip(&diff).for_each(|(x, &d)| *x -= d));
            }
        }
        self.nodes[idx].op = op;
    }

    fn take_grad(&mut self, v: Var) -> Option<Vec<F>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        Some(
            self.grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(&shape))
                .into_data(),
        )
    }

    fn restore_grad(&mut self, v: Var, g: Option<Vec<F>>) {
        if let Some(g) = g {
            let shape = self.nodes[v.0].value.shape().to_vec();
            self.grads[v.0] = Some(Tensor::new(shape, g).expect("gradient shape"));
        }
    }
}

fn transpose_last2<F: Real>(x: &[F], a: usize, b: usize, c: usize) -> Vec<F> {
    let mut y = vec![F::zero(); x.len()];
    for i in 0..a {
        let src = &x[i * b * c..(i + 1) * b * c];
        let dst = &mut y[i * b * c..(i + 1) * b * c];
        for j in 0..b {
            for k in 0..c {
                dst[k * b + j] = src[j * c + k];
            }
        }
    }
    y
}
