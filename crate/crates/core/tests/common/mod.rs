//! Brute-force reference implementations shared by integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Columns: delays `0..taps` of each source, zero-filled and truncated.
fn delay_matrix(sources: &[&[f64]], taps: usize) -> DMatrix<f64> {
    let t = sources[0].len();
    DMatrix::from_fn(t, sources.len() * taps, |row, col| {
        let (j, d) = (col / taps, col % taps);
        if row >= d {
            sources[j][row - d]
        } else {
            0.0
        }
    })
}

fn project(a: &DMatrix<f64>, e: &[f64]) -> Vec<f64> {
    let mut ata = DMatrix::zeros(a.ncols(), a.ncols());
    for i in 0..a.ncols() {
        for j in 0..a.ncols() {
            ata[(i, j)] = (0..a.nrows()).map(|r| a[(r, i)] * a[(r, j)]).sum();
        }
    }
    let ate = DVector::from_fn(a.ncols(), |i, _| (0..a.nrows()).map(|r| a[(r, i)] * e[r]).sum());
    let c = ata.lu().solve(&ate).expect("normal equations are nonsingular");
    (a * c).iter().copied().collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `(sdr, sir, sar, s_target, e_interf, e_artif)` from explicit normal
/// equations over the full delay matrices.
pub fn bss_oracle(v: &[f64], a: &[f64], e: &[f64], taps: usize) -> (f64, f64, f64) {
    let s_target = project(&delay_matrix(&[v], taps), e);
    let p_all = project(&delay_matrix(&[v, a], taps), e);
    let e_interf: Vec<f64> = p_all.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let e_artif: Vec<f64> = e.iter().zip(&p_all).map(|(x, p)| x - p).collect();
    let noise: Vec<f64> = e_interf.iter().zip(&e_artif).map(|(i, a)| i + a).collect();
    let st = energy(&s_target);
    (
        10.0 * (st / energy(&noise)).log10(),
        10.0 * (st / energy(&e_interf)).log10(),
        10.0 * (energy(&p_all) / energy(&e_artif)).log10(),
    )
}

/// Columns of the delay matrix, for orthogonality checks.
pub fn delayed(x: &[f64], d: usize) -> Vec<f64> {
    (0..x.len()).map(|t| if t >= d { x[t - d] } else { 0.0 }).collect()
}

fn midranks(abs: &[f64]) -> Vec<f64> {
    abs.iter()
        .map(|&x| {
            let less = abs.iter().filter(|&&y| y < x).count() as f64;
            let equal = abs.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided exact p: fraction of the `2^n` sign assignments whose
/// `min(W+, W-)` is at most the observed one.
pub fn wilcoxon_enumeration(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return 1.0;
    }
    let r = midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let total: f64 = r.iter().sum();
    let wp: f64 = r.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(x, _)| x).sum();
    let w_obs = wp.min(total - wp);
    let n = d.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        if w.min(total - w) <= w_obs + 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

fn binom(n: u64, k: u64) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// `min(1, 2 * P(X <= min(b, c)))`, `X ~ Binomial(b + c, 1/2)`, by exact
/// integer summation.
pub fn mcnemar_binomial(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let tail: u128 = (0..=b.min(c)).map(|k| binom(n, k)).sum();
    (2.0 * tail as f64 / (1u128 << n) as f64).min(1.0)
}

/// Fixed overfitting fixture at 22.05 kHz: a 220 Hz tone with two
/// raised-cosine bursts covering half the signal as vocals, one-pole low-passed white noise as
/// accompaniment. Returns `(mixture, vocals, accompaniment)`.
pub fn tone_burst_fixture(n: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    use rand::{Rng, SeedableRng};
    let sr = 22050.0;
    let ramp = 256.0;
    let bursts = [(n / 8, 3 * n / 8), (5 * n / 8, 7 * n / 8)];
    let env = |t: usize| -> f64 {
        for &(s, e) in &bursts {
            if t >= s && t < e {
                let d = ((t - s) as f64).min((e - 1 - t) as f64);
                return if d >= ramp { 1.0 } else { 0.5 - 0.5 * (std::f64::consts::PI * d / ramp).cos() };
            }
        }
        0.0
    };
    let vocals: Vec<f64> = (0..n)
        .map(|t| 0.5 * env(t) * (2.0 * std::f64::consts::PI * 220.0 * t as f64 / sr).sin())
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut y = 0.0;
    let mut acc: Vec<f64> = (0..n)
        .map(|_| {
            y = 0.9 * y + 0.1 * rng.gen_range(-1.0..1.0);
            y
        })
        .collect();
    let rms = (acc.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    acc.iter_mut().for_each(|v| *v *= 0.1 / rms);
    let mix = vocals.iter().zip(&acc).map(|(a, b)| (a + b) as f32).collect();
    (mix, vocals.iter().map(|&v| v as f32).collect(), acc.iter().map(|&v| v as f32).collect())
}
