use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::diff::{DiffError, Graph, Real, Var};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        })
    }
}

impl FromStr for LossKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mse" | "l2" => Ok(LossKind::Mse),
            "mae" | "l1" => Ok(LossKind::Mae),
            other => Err(TrainError::Config(format!("unknown loss `{other}`"))),
        }
    }
}

/// `alpha * final_kind(y, final) + beta * mid_kind(y, mid)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub final_kind: LossKind,
    pub mid_kind: Option<LossKind>,
    pub alpha: f64,
    pub beta: f64,
}

impl LossSpec {
    /// Named presets `<intermediate>-<final>` (`mse-mse`, `mae-mae`,
    /// `mae-mse`, `mse-mae`) and the single-output `mse`, `mae`.
    pub fn preset(name: &str) -> Option<Self> {
        let (mid, fin, beta, alpha) = match name.to_ascii_lowercase().as_str() {
            "mse-mse" => (Some(LossKind::Mse), LossKind::Mse, 0.5, 1.0),
            "mae-mae" => (Some(LossKind::Mae), LossKind::Mae, 0.5, 1.0),
            "mae-mse" => (Some(LossKind::Mae), LossKind::Mse, 0.05, 1.0),
            "mse-mae" => (Some(LossKind::Mse), LossKind::Mae, 1.0, 0.1),
            "mse" => (None, LossKind::Mse, 0.0, 1.0),
            "mae" => (None, LossKind::Mae, 0.0, 1.0),
            _ => return None,
        };
        Some(Self {
            final_kind: fin,
            mid_kind: mid,
            alpha,
            beta,
        })
    }

    pub const PRESETS: [&'static str; 6] = ["mse-mse", "mae-mae", "mae-mse", "mse-mae", "mse", "mae"];

    /// Default loss for a model: `mse-mae` for the composite, `mse` otherwise.
    pub fn default_for(model: &ModelConfig) -> Self {
        Self::preset(if model.has_intermediate() { "mse-mae" } else { "mse" }).expect("known preset")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TrainError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(TrainError::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.mid_kind.is_none() != (self.beta == 0.0) {
            return Err(TrainError::Config(
                "the intermediate loss must be set exactly when beta > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn check_model(&self, model: &ModelConfig) -> Result<(), TrainError> {
        self.validate()?;
        if self.mid_kind.is_some() && !model.has_intermediate() {
            return Err(TrainError::Config(format!(
                "model `{}` has no intermediate estimate to supervise",
                model.name()
            )));
        }
        Ok(())
    }
}

fn term<F: Real>(g: &mut Graph<F>, kind: LossKind, y: Var, est: Var) -> Result<Var, DiffError> {
    match kind {
        LossKind::Mse => g.mse(est, y),
        LossKind::Mae => g.mae(est, y),
    }
}

/// Records the weighted loss. The intermediate term is added whenever both
/// `spec.mid_kind` and `mid` are present, even with `beta == 0`.
pub fn deep_loss<F: Real>(
    g: &mut Graph<F>,
    y: Var,
    final_est: Var,
    mid: Option<Var>,
    spec: &LossSpec,
) -> Result<Var, TrainError> {
    let l1 = term(g, spec.final_kind, y, final_est)?;
    let mut total = g.scale(l1, spec.alpha);
    match (spec.mid_kind, mid) {
        (Some(kind), Some(mid)) => {
            let l2 = term(g, kind, y, mid)?;
            let weighted = g.scale(l2, spec.beta);
            total = g.add(total, weighted)?;
        }
        (Some(_), None) if spec.beta > 0.0 => {
            return Err(TrainError::Config("loss needs an intermediate estimate".into()));
        }
        _ => {}
    }
    Ok(total)
}

/// Plain evaluation of one loss term.
pub fn loss_value(kind: LossKind, y: &[f64], est: &[f64]) -> Result<f64, TrainError> {
    if y.len() != est.len() {
        return Err(TrainError::Config(format!("length mismatch: {} vs {}", y.len(), est.len())));
    }
    let n = y.len().max(1) as f64;
    Ok(match kind {
        LossKind::Mse => y.iter().zip(est).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
        LossKind::Mae => y.iter().zip(est).map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
    })
}
