use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Scott's rule, `n^(-1/5) * sample std`.
    Auto,
    Fixed(f64),
}

/// Gaussian KDE evaluated on a shared grid. Each non-empty column is
/// normalized to unit trapezoid area; an empty population gives zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeTable {
    pub x: Vec<f64>,
    pub overall: Vec<f64>,
    pub silent: Vec<f64>,
    pub nonsilent: Vec<f64>,
    pub bandwidth: f64,
    /// Zero-variance input: a narrow kernel `1e-3 |mean| + 1e-6` was used.
    pub degenerate: bool,
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn scott(v: &[f64]) -> f64 {
    (v.len() as f64).powf(-0.2) * std_dev(v)
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0).sum()
}

fn density(values: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return vec![0.0; grid.len()];
    }
    let raw: Vec<f64> = grid
        .iter()
        .map(|&g| values.iter().map(|&v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum())
        .collect();
    let area = trapezoid(grid, &raw);
    if area > 0.0 {
        raw.iter().map(|r| r / area).collect()
    } else {
        raw
    }
}

/// `silent[i]` splits `values` into the silent and non-silent populations.
/// Sub-populations use their own Scott bandwidth when they have spread,
/// otherwise the overall one.
pub fn kde_export(values: &[f64], silent: &[bool], bandwidth: Bandwidth, grid: usize) -> Result<KdeTable, MetricsError> {
    if values.len() != silent.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} values, {} labels",
            values.len(),
            silent.len()
        )));
    }
    if values.len() < 2 {
        return Err(MetricsError::InvalidArgument("KDE needs at least two values".into()));
    }
    if grid < 2 {
        return Err(MetricsError::InvalidArgument("KDE grid needs at least two points".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let degenerate = std_dev(values) == 0.0;
    let h = match (bandwidth, degenerate) {
        (Bandwidth::Fixed(h), _) if h > 0.0 && h.is_finite() => h,
        (Bandwidth::Fixed(h), _) => {
            return Err(MetricsError::InvalidArgument(format!("bandwidth {h} must be positive")));
        }
        (Bandwidth::Auto, true) => 1e-3 * mean.abs() + 1e-6,
        (Bandwidth::Auto, false) => scott(values),
    };
    let split = |want: bool| -> Vec<f64> {
        values.iter().zip(silent).filter(|(_, s)| **s == want).map(|(v, _)| *v).collect()
    };
    let (sil, non) = (split(true), split(false));
    let sub_h = |v: &[f64]| match bandwidth {
        Bandwidth::Auto if std_dev(v) > 0.0 => scott(v),
        _ => h,
    };
    let (h_sil, h_non) = (sub_h(&sil), sub_h(&non));
    let reach = 3.0 * h.max(h_sil).max(h_non);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - reach;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + reach;
    let x: Vec<f64> = (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect();
    Ok(KdeTable {
        overall: density(values, h, &x),
        silent: density(&sil, h_sil, &x),
        nonsilent: density(&non, h_non, &x),
        x,
        bandwidth: h,
        degenerate,
    })
}
