//! Convolution kernels on raw buffers. Layouts are `[batch, channels, time]`,
//! conv weights `[out, in / groups, k]`, transposed-conv weights `[in, out, k]`.
//! Cross-correlation convention throughout (no kernel flip).

use super::{DiffError, Real};

/// Geometry shared by the forward and backward passes of a 1-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad_left == 0 && self.t_in == self.t_out
    }
}

/// `cols[(c * k_len + k) * t_out + t] = x[c, t * stride + k * dilation - pad_left]`, zero outside.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<F: Real>(
    x: &[F],
    channels: usize,
    t_in: usize,
    k_len: usize,
    stride: usize,
    dilation: usize,
    pad_left: usize,
    t_out: usize,
    cols: &mut [F],
) {
    for c in 0..channels {
        let row_in = &x[c * t_in..(c + 1) * t_in];
        for k in 0..k_len {
            let row = &mut cols[(c * k_len + k) * t_out..(c * k_len + k + 1) * t_out];
            let offset = (k * dilation) as isize - pad_left as isize;
            for (t, out) in row.iter_mut().enumerate() {
                let idx = (t * stride) as isize + offset;
                *out = if idx >= 0 && (idx as usize) < t_in {
                    row_in[idx as usize]
                } else {
                    F::zero()
                };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the signal.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<F: Real>(
    cols: &[F],
    channels: usize,
    t_in: usize,
    k_len: usize,
    stride: usize,
    dilation: usize,
    pad_left: usize,
    t_out: usize,
    x: &mut [F],
) {
    for c in 0..channels {
        let row_out = &mut x[c * t_in..(c + 1) * t_in];
        for k in 0..k_len {
            let row = &cols[(c * k_len + k) * t_out..(c * k_len + k + 1) * t_out];
            let offset = (k * dilation) as isize - pad_left as isize;
            for (t, &v) in row.iter().enumerate() {
                let idx = (t * stride) as isize + offset;
                if idx >= 0 && (idx as usize) < t_in {
                    row_out[idx as usize] += v;
                }
            }
        }
    }
}

pub(crate) fn conv_out_len(
    t_in: usize,
    pad_total: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
) -> Result<usize, DiffError> {
    let span = dilation * (kernel - 1) + 1;
    let padded = t_in + pad_total;
    if padded < span {
        return Err(DiffError::shape(
            "conv1d",
            format!("kernel span {span} exceeds padded input length {padded}"),
        ));
    }
    Ok((padded - span) / stride + 1)
}

pub(crate) fn conv1d_forward<F: Real>(
    g: &ConvGeom,
    x: &[F],
    w: &[F],
    bias: Option<&[F]>,
    y: &mut [F],
) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let kk = cin_g * g.kernel;
    let mut cols = if g.is_pointwise() || (cin_g == 1 && cout_g == 1) {
        Vec::new()
    } else {
        vec![F::zero(); kk * g.t_out]
    };
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let xs = &x[(b * g.c_in + grp * cin_g) * g.t_in..(b * g.c_in + (grp + 1) * cin_g) * g.t_in];
            let ws = &w[grp * cout_g * kk..(grp + 1) * cout_g * kk];
            let ys = &mut y[(b * g.c_out + grp * cout_g) * g.t_out..(b * g.c_out + (grp + 1) * cout_g) * g.t_out];
            if cin_g == 1 && cout_g == 1 {
                depthwise_forward(g, xs, ws, ys);
            } else if g.is_pointwise() {
                F::gemm(false, false, cout_g, g.t_out, cin_g, F::one(), ws, xs, F::zero(), ys);
            } else {
                im2col(xs, cin_g, g.t_in, g.kernel, g.stride, g.dilation, g.pad_left, g.t_out, &mut cols);
                F::gemm(false, false, cout_g, g.t_out, kk, F::one(), ws, &cols, F::zero(), ys);
            }
        }
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                let row = &mut y[(b * g.c_out + o) * g.t_out..(b * g.c_out + o + 1) * g.t_out];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

fn depthwise_forward<F: Real>(g: &ConvGeom, x: &[F], w: &[F], y: &mut [F]) {
    for (t, out) in y.iter_mut().enumerate() {
        let mut acc = F::zero();
        for (k, &wk) in w.iter().enumerate() {
            let idx = (t * g.stride + k * g.dilation) as isize - g.pad_left as isize;
            if idx >= 0 && (idx as usize) < g.t_in {
                acc += wk * x[idx as usize];
            }
        }
        *out = acc;
    }
}

/// Accumulates into `dx`, `dw`, `db` (each optional).
pub(crate) fn conv1d_backward<F: Real>(
    g: &ConvGeom,
    x: &[F],
    w: &[F],
    dy: &[F],
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
    db: Option<&mut [F]>,
) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let kk = cin_g * g.kernel;
    let depthwise = cin_g == 1 && cout_g == 1;
    let pointwise = g.is_pointwise();
    let mut cols = if depthwise { Vec::new() } else { vec![F::zero(); kk * g.t_out] };
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let x_range = (b * g.c_in + grp * cin_g) * g.t_in..(b * g.c_in + (grp + 1) * cin_g) * g.t_in;
            let xs = &x[x_range.clone()];
            let w_range = grp * cout_g * kk..(grp + 1) * cout_g * kk;
            let ws = &w[w_range.clone()];
            let dys = &dy[(b * g.c_out + grp * cout_g) * g.t_out..(b * g.c_out + (grp + 1) * cout_g) * g.t_out];
            if depthwise {
                for (t, &d) in dys.iter().enumerate() {
                    for k in 0..g.kernel {
                        let idx = (t * g.stride + k * g.dilation) as isize - g.pad_left as isize;
                        if idx >= 0 && (idx as usize) < g.t_in {
                            let i = idx as usize;
                            if let Some(dw) = dw.as_deref_mut() {
                                dw[w_range.start + k] += d * xs[i];
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[x_range.start + i] += d * ws[k];
                            }
                        }
                    }
                }
                continue;
            }
            if let Some(dw) = dw.as_deref_mut() {
                let dws = &mut dw[w_range.clone()];
                if pointwise {
                    F::gemm(false, true, cout_g, kk, g.t_out, F::one(), dys, xs, F::one(), dws);
                } else {
                    im2col(xs, cin_g, g.t_in, g.kernel, g.stride, g.dilation, g.pad_left, g.t_out, &mut cols);
                    F::gemm(false, true, cout_g, kk, g.t_out, F::one(), dys, &cols, F::one(), dws);
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                let dxs = &mut dx[x_range.clone()];
                if pointwise {
                    F::gemm(true, false, kk, g.t_out, cout_g, F::one(), ws, dys, F::one(), dxs);
                } else {
                    F::gemm(true, false, kk, g.t_out, cout_g, F::one(), ws, dys, F::zero(), &mut cols);
                    col2im(&cols, cin_g, g.t_in, g.kernel, g.stride, g.dilation, g.pad_left, g.t_out, dxs);
                }
            }
        }
    }
    if let Some(db) = db {
        for b in 0..g.batch {
            for (o, dbv) in db.iter_mut().enumerate() {
                let row = &dy[(b * g.c_out + o) * g.t_out..(b * g.c_out + o + 1) * g.t_out];
                *dbv += row.iter().copied().sum::<F>();
            }
        }
    }
}

/// Transposed convolution geometry: `t_out = (t_in - 1) * stride + kernel`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvTGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

pub(crate) fn conv_transpose1d_forward<F: Real>(
    g: &ConvTGeom,
    x: &[F],
    w: &[F],
    bias: Option<&[F]>,
    y: &mut [F],
) {
    let rows = g.c_out * g.kernel;
    let mut cols = vec![F::zero(); rows * g.t_in];
    for b in 0..g.batch {
        let xs = &x[b * g.c_in * g.t_in..(b + 1) * g.c_in * g.t_in];
        let ys = &mut y[b * g.c_out * g.t_out..(b + 1) * g.c_out * g.t_out];
        ys.iter_mut().for_each(|v| *v = F::zero());
        F::gemm(true, false, rows, g.t_in, g.c_in, F::one(), w, xs, F::zero(), &mut cols);
        // Output positions play the role of the im2col "input" signal.
        col2im(&cols, g.c_out, g.t_out, g.kernel, g.stride, 1, 0, g.t_in, ys);
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                ys[o * g.t_out..(o + 1) * g.t_out].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

pub(crate) fn conv_transpose1d_backward<F: Real>(
    g: &ConvTGeom,
    x: &[F],
    w: &[F],
    dy: &[F],
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
    db: Option<&mut [F]>,
) {
    let rows = g.c_out * g.kernel;
    let mut cols = vec![F::zero(); rows * g.t_in];
    for b in 0..g.batch {
        let xs = &x[b * g.c_in * g.t_in..(b + 1) * g.c_in * g.t_in];
        let dys = &dy[b * g.c_out * g.t_out..(b + 1) * g.c_out * g.t_out];
        im2col(dys, g.c_out, g.t_out, g.kernel, g.stride, 1, 0, g.t_in, &mut cols);
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[b * g.c_in * g.t_in..(b + 1) * g.c_in * g.t_in];
            F::gemm(false, false, g.c_in, g.t_in, rows, F::one(), w, &cols, F::one(), dxs);
        }
        if let Some(dw) = dw.as_deref_mut() {
            F::gemm(false, true, g.c_in, rows, g.t_in, F::one(), xs, &cols, F::one(), dw);
        }
    }
    if let Some(db) = db {
        for b in 0..g.batch {
            for (o, dbv) in db.iter_mut().enumerate() {
                let row = &dy[(b * g.c_out + o) * g.t_out..(b * g.c_out + o + 1) * g.t_out];
                *dbv += row.iter().copied().sum::<F>();
            }
        }
    }
}
