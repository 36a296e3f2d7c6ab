use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffError, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

/// How a parameter is drawn at construction time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitSpec {
    /// Uniform on `[-l, l]` with `l = sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform { fan_in: usize, fan_out: usize },
    Constant(f64),
    /// Recurrent gate bias: zero except the forget-gate quarter, which is `forget`.
    LstmBias { hidden: usize, forget: f64 },
}

impl InitSpec {
    fn sample<F: Real, R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<F> {
        match *self {
            InitSpec::GlorotUniform { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                (0..len)
                    .map(|_| F::of(rng.gen_range(-limit..=limit)))
                    .collect()
            }
            InitSpec::Constant(c) => vec![F::of(c); len],
            InitSpec::LstmBias { hidden, forget } => (0..len)
                .map(|i| {
                    if (hidden..2 * hidden).contains(&i) {
                        F::of(forget)
                    } else {
                        F::zero()
                    }
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub init: InitSpec,
}

/// Non-trainable per-channel normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<F> {
    pub name: String,
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

/// Owns every trainable parameter and normalization buffer of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    stats: Vec<RunningStats<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            stats: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: InitSpec,
        rng: &mut R,
    ) -> Result<ParamId, DiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) || self.stats.iter().any(|s| s.name == name) {
            return Err(DiffError::DuplicateParameter(name));
        }
        let len = shape.iter().product();
        let value = Tensor::new(shape.to_vec(), init.sample(len, rng))?;
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.clone(),
            grad: Tensor::zeros(shape),
            value,
            init,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> Result<StatsId, DiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) || self.stats.iter().any(|s| s.name == name) {
            return Err(DiffError::DuplicateParameter(name));
        }
        self.stats.push(RunningStats {
            name,
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
        });
        Ok(StatsId(self.stats.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn params(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<F>] {
        &mut self.params
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats<F> {
        &self.stats[id.0]
    }

    pub fn stats_mut(&mut self, id: StatsId) -> &mut RunningStats<F> {
        &mut self.stats[id.0]
    }

    pub fn all_stats(&self) -> &[RunningStats<F>] {
        &self.stats
    }

    pub fn all_stats_mut(&mut self) -> &mut [RunningStats<F>] {
        &mut self.stats
    }

    /// Number of trainable scalars. Running statistics are not counted.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    /// Same layout with every value converted to another precision.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    init: p.init,
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    name: s.name.clone(),
                    mean: s.mean.iter().map(|v| G::of(v.as_f64())).collect(),
                    var: s.var.iter().map(|v| G::of(v.as_f64())).collect(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        store.add("a.w", &[2, 2], InitSpec::Constant(0.0), &mut rng).unwrap();
        let err = store.add("a.w", &[1], InitSpec::Constant(0.0), &mut rng);
        assert!(matches!(err, Err(DiffError::DuplicateParameter(n)) if n == "a.w"));
    }

    #[test]
    fn counts_exclude_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        store.add("dense.w", &[5, 10], InitSpec::GlorotUniform { fan_in: 10, fan_out: 5 }, &mut rng).unwrap();
        store.add("dense.b", &[5], InitSpec::Constant(0.0), &mut rng).unwrap();
        store.add_stats("bn", 64).unwrap();
        assert_eq!(store.param_count(), 55);
    }

    #[test]
    fn glorot_respects_limit_and_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let w = store
            .add("w", &[40, 60], InitSpec::GlorotUniform { fan_in: 60, fan_out: 40 }, &mut rng)
            .unwrap();
        let limit = (6.0f64 / 100.0).sqrt();
        assert!(store.get(w).value.data().iter().all(|v| v.abs() <= limit));
        let b = store
            .add("b", &[12], InitSpec::LstmBias { hidden: 3, forget: 1.0 }, &mut rng)
            .unwrap();
        assert_eq!(
            store.get(b).value.data(),
            &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]
        );
    }
}
