//! Single-direction LSTM over `[batch, time, features]` with gate order
//! input, forget, cell candidate, output. Zero initial state.

use super::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmGeom {
    pub batch: usize,
    pub time: usize,
    pub input: usize,
    pub hidden: usize,
    pub reverse: bool,
}

impl LstmGeom {
    /// Time index visited at processing step `s`.
    fn t_at(&self, s: usize) -> usize {
        if self.reverse {
            self.time - 1 - s
        } else {
            s
        }
    }
}

/// Activations cached by the forward pass, indexed by processing step.
#[derive(Clone, Debug)]
pub(crate) struct LstmCache<F> {
    /// `[step, batch, 4 * hidden]` post-nonlinearity gate values.
    gates: Vec<F>,
    /// `[step, batch, hidden]` cell states.
    cells: Vec<F>,
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Returns the cache; `y` receives `[batch, time, hidden]` hidden states.
pub(crate) fn lstm_forward<F: Real>(
    g: &LstmGeom,
    x: &[F],
    w_ih: &[F],
    w_hh: &[F],
    bias: &[F],
    y: &mut [F],
) -> LstmCache<F> {
    let (b_n, t_n, h) = (g.batch, g.time, g.hidden);
    let h4 = 4 * h;
    let mut proj = vec![F::zero(); b_n * t_n * h4];
    F::gemm(false, true, b_n * t_n, h4, g.input, F::one(), x, w_ih, F::zero(), &mut proj);
    let mut gates = vec![F::zero(); t_n * b_n * h4];
    let mut cells = vec![F::zero(); t_n * b_n * h];
    let mut h_prev = vec![F::zero(); b_n * h];
    let mut c_prev = vec![F::zero(); b_n * h];
    let mut z = vec![F::zero(); b_n * h4];
    for s in 0..t_n {
        let t = g.t_at(s);
        for b in 0..b_n {
            let src = &proj[(b * t_n + t) * h4..(b * t_n + t + 1) * h4];
            for (j, zv) in z[b * h4..(b + 1) * h4].iter_mut().enumerate() {
                *zv = src[j] + bias[j];
            }
        }
        F::gemm(false, true, b_n, h4, h, F::one(), &h_prev, w_hh, F::one(), &mut z);
        let gs = &mut gates[s * b_n * h4..(s + 1) * b_n * h4];
        let cs = &mut cells[s * b_n * h..(s + 1) * b_n * h];
        for b in 0..b_n {
            for j in 0..h {
                let zi = z[b * h4 + j];
                let zf = z[b * h4 + h + j];
                let zg = z[b * h4 + 2 * h + j];
                let zo = z[b * h4 + 3 * h + j];
                let (i, f, gc, o) = (sigmoid(zi), sigmoid(zf), zg.tanh(), sigmoid(zo));
                let c = f * c_prev[b * h + j] + i * gc;
                let hv = o * c.tanh();
                gs[b * h4 + j] = i;
                gs[b * h4 + h + j] = f;
                gs[b * h4 + 2 * h + j] = gc;
                gs[b * h4 + 3 * h + j] = o;
                cs[b * h + j] = c;
                c_prev[b * h + j] = c;
                h_prev[b * h + j] = hv;
                y[(b * t_n + t) * h + j] = hv;
            }
        }
    }
    LstmCache { gates, cells }
}

pub(crate) struct LstmGrads<'a, F> {
    pub dx: Option<&'a mut [F]>,
    pub dw_ih: Option<&'a mut [F]>,
    pub dw_hh: Option<&'a mut [F]>,
    pub dbias: Option<&'a mut [F]>,
}

/// Backpropagation through time. `y` is the forward output, `dy` its gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward<F: Real>(
    g: &LstmGeom,
    cache: &LstmCache<F>,
    x: &[F],
    w_ih: &[F],
    w_hh: &[F],
    y: &[F],
    dy: &[F],
    grads: LstmGrads<'_, F>,
) {
    let (b_n, t_n, h) = (g.batch, g.time, g.hidden);
    let h4 = 4 * h;
    let one = F::one();
    let mut dproj = vec![F::zero(); b_n * t_n * h4];
    let mut dh_next = vec![F::zero(); b_n * h];
    let mut dc_next = vec![F::zero(); b_n * h];
    let mut dz = vec![F::zero(); b_n * h4];
    let mut h_prev = vec![F::zero(); b_n * h];
    let mut dw_hh_acc = vec![F::zero(); h4 * h];
    for s in (0..t_n).rev() {
        let t = g.t_at(s);
        let gs = &cache.gates[s * b_n * h4..(s + 1) * b_n * h4];
        let cs = &cache.cells[s * b_n * h..(s + 1) * b_n * h];
        for b in 0..b_n {
            for j in 0..h {
                let i = gs[b * h4 + j];
                let f = gs[b * h4 + h + j];
                let gc = gs[b * h4 + 2 * h + j];
                let o = gs[b * h4 + 3 * h + j];
                let c = cs[b * h + j];
                let c_prev = if s > 0 {
                    cache.cells[(s - 1) * b_n * h + b * h + j]
                } else {
                    F::zero()
                };
                let dh = dy[(b * t_n + t) * h + j] + dh_next[b * h + j];
                let tc = c.tanh();
                let d_o = dh * tc;
                let dc = dh * o * (one - tc * tc) + dc_next[b * h + j];
                dc_next[b * h + j] = dc * f;
                dz[b * h4 + j] = dc * gc * i * (one - i);
                dz[b * h4 + h + j] = dc * c_prev * f * (one - f);
                dz[b * h4 + 2 * h + j] = dc * i * (one - gc * gc);
                dz[b * h4 + 3 * h + j] = d_o * o * (one - o);
                h_prev[b * h + j] = if s > 0 {
                    y[(b * t_n + g.t_at(s - 1)) * h + j]
                } else {
                    F::zero()
                };
            }
        }
        F::gemm(true, false, h4, h, b_n, one, &dz, &h_prev, one, &mut dw_hh_acc);
        F::gemm(false, false, b_n, h, h4, one, &dz, w_hh, F::zero(), &mut dh_next);
        for b in 0..b_n {
            dproj[(b * t_n + t) * h4..(b * t_n + t + 1) * h4].copy_from_slice(&dz[b * h4..(b + 1) * h4]);
        }
    }
    if let Some(dw_hh) = grads.dw_hh {
        for (a, &v) in dw_hh.iter_mut().zip(&dw_hh_acc) {
            *a += v;
        }
    }
    if let Some(db) = grads.dbias {
        for row in dproj.chunks(h4) {
            for (a, &v) in db.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    if let Some(dw_ih) = grads.dw_ih {
        F::gemm(true, false, h4, g.input, b_n * t_n, one, &dproj, x, one, dw_ih);
    }
    if let Some(dx) = grads.dx {
        F::gemm(false, false, b_n * t_n, g.input, h4, one, &dproj, w_ih, one, dx);
    }
}
