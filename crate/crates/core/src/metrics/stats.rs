use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::MetricsError;

/// Largest effective sample size handled by exact enumeration.
pub const EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Wilcoxon,
    Mcnemar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Approximate,
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: Method,
}

impl SignificanceResult {
    fn degenerate(test: TestKind) -> Self {
        Self {
            test,
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            method: Method::Degenerate,
        }
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Midranks of `|d|` doubled so ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, times two
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

/// Paired two-sided Wilcoxon signed-rank test on `a - b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<SignificanceResult, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(format!("{} vs {} paired samples", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(MetricsError::InvalidArgument("no paired samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(MetricsError::NonFinite);
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x != y)
        .map(|(x, y)| x - y)
        .collect();
    if d.is_empty() {
        return Ok(SignificanceResult::degenerate(TestKind::Wilcoxon));
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let w_plus: u64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let w = w_plus.min(total - w_plus);

    if n <= EXACT_MAX_N {
        // counts[s] = number of sign assignments with doubled W+ == s
        let mut counts = vec![0f64; total as usize + 1];
        counts[0] = 1.0;
        for &r in &ranks {
            for s in (r as usize..=total as usize).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let tail: f64 = counts[..=w as usize].iter().sum();
        let p = (2.0 * tail / 2f64.powi(n as i32)).min(1.0);
        return Ok(SignificanceResult {
            test: TestKind::Wilcoxon,
            statistic: w as f64 / 2.0,
            p_value: p,
            n_effective: n,
            method: Method::Exact,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let wf = w as f64 / 2.0;
    let z = ((wf - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0);
    Ok(SignificanceResult {
        test: TestKind::Wilcoxon,
        statistic: wf,
        p_value: p,
        n_effective: n,
        method: Method::Approximate,
    })
}

/// Paired McNemar test on `(A correct, B correct)` outcomes.
pub fn mcnemar(pairs: &[(bool, bool)]) -> Result<SignificanceResult, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::InvalidArgument("no paired outcomes".into()));
    }
    let b = pairs.iter().filter(|(x, y)| *x && !*y).count();
    let c = pairs.iter().filter(|(x, y)| !*x && *y).count();
    let n = b + c;
    if n == 0 {
        return Ok(SignificanceResult::degenerate(TestKind::Mcnemar));
    }
    if n <= EXACT_MAX_N {
        let k = b.min(c);
        let mut coef = 1f64;
        let mut tail = 0f64;
        for i in 0..=k {
            if i > 0 {
                coef = coef * (n - i + 1) as f64 / i as f64;
            }
            tail += coef;
        }
        let p = (2.0 * tail / 2f64.powi(n as i32)).min(1.0);
        return Ok(SignificanceResult {
            test: TestKind::Mcnemar,
            statistic: k as f64,
            p_value: p,
            n_effective: n,
            method: Method::Exact,
        });
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let chi2 = diff * diff / n as f64;
    let dist = ChiSquared::new(1.0).expect("one degree of freedom");
    Ok(SignificanceResult {
        test: TestKind::Mcnemar,
        statistic: chi2,
        p_value: (1.0 - dist.cdf(chi2)).clamp(0.0, 1.0),
        n_effective: n,
        method: Method::Approximate,
    })
}
