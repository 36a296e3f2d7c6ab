//! Filter-based BSS-eval decomposition of an estimate against two reference
//! sources (target vocals and accompaniment).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Relative ridge added to the Gram diagonal: `1e-10 * mean(diag)`.
pub const RIDGE: f64 = 1e-10;
/// A denominator below this fraction of `||s_target||^2` gives `+inf`.
pub const INF_RATIO: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BssScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// `estimate = s_target + e_interf + e_artif`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

/// `G[a][b] = sum_t x[t - a] * y[t - b]` for delays `a, b < taps`, with
/// signals zero before `t = 0` and truncated at `T`.
fn cross_gram(x: &[f64], y: &[f64], taps: usize) -> Vec<Vec<f64>> {
    let t_len = x.len();
    let mut g = vec![vec![0.0; taps]; taps];
    for b in 0..taps {
        g[0][b] = (b..t_len).map(|t| x[t] * y[t - b]).sum();
    }
    for a in 1..taps {
        g[a][0] = (a..t_len).map(|t| x[t - a] * y[t]).sum();
    }
    // Shifting both delays by one drops the last product of the sum.
    for a in 1..taps {
        for b in 1..taps {
            let (ia, ib) = (t_len - a, t_len - b);
            let tail = if ia < t_len && ib < t_len { x[ia] * y[ib] } else { 0.0 };
            g[a][b] = g[a - 1][b - 1] - tail;
        }
    }
    g
}

/// `r[a] = sum_t x[t - a] * e[t]`.
fn delayed_dot(x: &[f64], e: &[f64], taps: usize) -> Vec<f64> {
    (0..taps).map(|a| (a..x.len()).map(|t| x[t - a] * e[t]).sum()).collect()
}

fn solve(mut g: DMatrix<f64>, r: DVector<f64>) -> DVector<f64> {
    let n = g.nrows();
    let scale = (g.trace() / n as f64).max(f64::MIN_POSITIVE);
    for i in 0..n {
        g[(i, i)] += RIDGE * scale;
    }
    match g.clone().cholesky() {
        Some(c) => c.solve(&r),
        None => g
            .svd(true, true)
            .solve(&r, 1e-14)
            .expect("svd with both factors computed"),
    }
}

fn synthesize(sources: &[&[f64]], coef: &DVector<f64>, taps: usize, t_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; t_len];
    for (j, s) in sources.iter().enumerate() {
        for a in 0..taps {
            let c = coef[j * taps + a];
            if c == 0.0 {
                continue;
            }
            for t in a..t_len {
                out[t] += c * s[t - a];
            }
        }
    }
    out
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn check_inputs(vocals: &[f64], accomp: &[f64], estimate: &[f64], filter_len: usize) -> Result<(), MetricsError> {
    let t = vocals.len();
    if accomp.len() != t || estimate.len() != t {
        return Err(MetricsError::LengthMismatch(format!(
            "vocals {t}, accompaniment {}, estimate {}",
            accomp.len(),
            estimate.len()
        )));
    }
    if filter_len == 0 || filter_len > t {
        return Err(MetricsError::InvalidArgument(format!(
            "filter length {filter_len} must be in 1..={t}"
        )));
    }
    if vocals.iter().chain(accomp).chain(estimate).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    if vocals.iter().all(|&v| v == 0.0) {
        return Err(MetricsError::SilentReference);
    }
    Ok(())
}

/// Projects `estimate` onto the delayed-vocals subspace and onto the
/// subspace of delays of both sources.
pub fn bss_decompose(
    vocals: &[f64],
    accomp: &[f64],
    estimate: &[f64],
    filter_len: usize,
) -> Result<Decomposition, MetricsError> {
    check_inputs(vocals, accomp, estimate, filter_len)?;
    let (t, l) = (vocals.len(), filter_len);
    let gvv = cross_gram(vocals, vocals, l);
    let gva = cross_gram(vocals, accomp, l);
    let gaa = cross_gram(accomp, accomp, l);
    let rv = delayed_dot(vocals, estimate, l);
    let ra = delayed_dot(accomp, estimate, l);

    let g_target = DMatrix::from_fn(l, l, |a, b| gvv[a][b]);
    let c_target = solve(g_target, DVector::from_vec(rv.clone()));
    let s_target = synthesize(&[vocals], &c_target, l, t);

    let g_all = DMatrix::from_fn(2 * l, 2 * l, |i, j| match (i < l, j < l) {
        (true, true) => gvv[i][j],
        (true, false) => gva[i][j - l],
        (false, true) => gva[j][i - l],
        (false, false) => gaa[i - l][j - l],
    });
    let r_all = DVector::from_iterator(2 * l, rv.into_iter().chain(ra));
    let c_all = solve(g_all, r_all);
    let p_all = synthesize(&[vocals, accomp], &c_all, l, t);

    let e_interf: Vec<f64> = p_all.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let e_artif: Vec<f64> = estimate.iter().zip(&p_all).map(|(e, p)| e - p).collect();
    Ok(Decomposition {
        s_target,
        e_interf,
        e_artif,
    })
}

fn ratio_db(num: f64, den: f64, target_energy: f64) -> f64 {
    if den < INF_RATIO * target_energy || den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

pub fn scores(d: &Decomposition) -> BssScores {
    let st = energy(&d.s_target);
    let noise: Vec<f64> = d.e_interf.iter().zip(&d.e_artif).map(|(i, a)| i + a).collect();
    let target_interf: Vec<f64> = d.s_target.iter().zip(&d.e_interf).map(|(s, i)| s + i).collect();
    BssScores {
        sdr: ratio_db(st, energy(&noise), st),
        sir: ratio_db(st, energy(&d.e_interf), st),
        sar: ratio_db(energy(&target_interf), energy(&d.e_artif), st),
    }
}

/// SDR, SIR and SAR in dB; `+inf` marks a vanishing error term.
pub fn bss_eval(
    vocals: &[f64],
    accomp: &[f64],
    estimate: &[f64],
    filter_len: usize,
) -> Result<BssScores, MetricsError> {
    Ok(scores(&bss_decompose(vocals, accomp, estimate, filter_len)?))
}
