//! Differentiable building blocks: tensors, a reverse-mode tape, parameter
//! storage and a finite-difference gradient checker.

mod conv;
mod gradcheck;
mod graph;
mod lstm;
mod params;
mod real;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_with, grad_check, FiniteDiff, GradCheckReport, Probe, Stencil};
pub use graph::{BatchNormSpec, Conv1dSpec, Graph, LstmVars, NormMode, Padding, Var};
pub use params::{InitSpec, ParamId, ParamStore, Parameter, RunningStats, StatsId};
pub use real::Real;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
}

impl DiffError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Self::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Self::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}
