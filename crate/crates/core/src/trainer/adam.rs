use super::TrainError;
use crate::diff::{ParamStore, Real};

/// Adam with bias-corrected moments. Moments are kept in the parameter
/// precision; the update itself is computed in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(store: &ParamStore<F>, lr: f64) -> Self {
        let zeros = || store.params().iter().map(|p| vec![F::zero(); p.value.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the gradients held in `store`. Non-finite
    /// gradients abort before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<(), TrainError> {
        if self.m.len() != store.params().len() {
            return Err(TrainError::Config("optimizer state does not match the model".into()));
        }
        if let Some(p) = store.params().iter().find(|p| !p.grad.all_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: p.name.clone(),
                step: self.step + 1,
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = p.grad.data().to_vec();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[j].as_f64();
                let mj = self.beta1 * m[j].as_f64() + (1.0 - self.beta1) * g;
                let vj = self.beta2 * v[j].as_f64() + (1.0 - self.beta2) * g * g;
                m[j] = F::of(mj);
                v[j] = F::of(vj);
                let update = self.lr * (mj / c1) / ((vj / c2).sqrt() + self.eps);
                *w = F::of(w.as_f64() - update);
            }
        }
        Ok(())
    }
}
