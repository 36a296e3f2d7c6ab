use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DiffError, Graph, Tensor, Var};

const STEP: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub tested_shapes: Vec<Vec<usize>>,
    pub seed: u64,
    /// Number of scalar coordinates compared.
    pub checked: usize,
}

/// Finite-difference stencil.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`.
    Central,
    /// `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`, fourth-order accurate.
    FivePoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteDiff {
    pub step: f64,
    pub stencil: Stencil,
}

impl Default for FiniteDiff {
    fn default() -> Self {
        Self {
            step: STEP,
            stencil: Stencil::Central,
        }
    }
}

/// One evaluation of the objective.
#[derive(Clone, Debug)]
pub struct Probe {
    pub value: f64,
    /// Gradient w.r.t. every input (only read at the unperturbed point).
    pub grads: Vec<Tensor<f64>>,
    /// Piecewise-linear branch pattern of the unperturbed point, see
    /// [`Graph::kink_pattern`]. Empty when the objective is smooth.
    pub pattern: Vec<bool>,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences with step `1e-5`.
///
/// `eval(inputs)` returns the scalar objective and its gradient w.r.t. every
/// input. When `max_coords` is set, at most that many coordinates per input
/// (chosen with `seed`) are perturbed.
pub fn check_gradients<E>(
    op_name: &str,
    inputs: Vec<Tensor<f64>>,
    seed: u64,
    max_coords: Option<usize>,
    mut eval: impl FnMut(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>), E>,
) -> Result<GradCheckReport, E>
where
    E: From<DiffError>,
{
    check_gradients_with(op_name, inputs, seed, max_coords, FiniteDiff::default(), |xs, _| {
        let (value, grads) = eval(xs)?;
        Ok(Probe {
            value,
            grads,
            pattern: Vec::new(),
        })
    })
}

/// General form of [`check_gradients`]. `eval` receives `None` at the
/// unperturbed point and that point's kink pattern at every perturbed
/// point; evaluating with the pattern frozen (see
/// [`Graph::with_frozen_kinks`]) keeps the probes on the smooth piece whose
/// derivative the analytic gradient is, so any step size is valid.
pub fn check_gradients_with<E>(
    op_name: &str,
    mut inputs: Vec<Tensor<f64>>,
    seed: u64,
    max_coords: Option<usize>,
    fd: FiniteDiff,
    mut eval: impl FnMut(&[Tensor<f64>], Option<&[bool]>) -> Result<Probe, E>,
) -> Result<GradCheckReport, E>
where
    E: From<DiffError>,
{
    let base = eval(&inputs, None)?;
    let offsets: &[(f64, f64)] = match fd.stencil {
        Stencil::Central => &[(1.0, 0.5), (-1.0, -0.5)],
        Stencil::FivePoint => &[
            (2.0, -1.0 / 12.0),
            (1.0, 8.0 / 12.0),
            (-1.0, -8.0 / 12.0),
            (-2.0, 1.0 / 12.0),
        ],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for i in 0..inputs.len() {
        let len = inputs[i].len();
        let mut order: Vec<usize> = (0..len).collect();
        if let Some(m) = max_coords.filter(|&m| m < len) {
            order.shuffle(&mut rng);
            order.truncate(m);
        }
        for &c in &order {
            let orig = inputs[i].data()[c];
            // Step actually taken after rounding.
            let h = (orig + fd.step) - orig;
            let mut acc = 0.0;
            for &(k, w) in offsets {
                inputs[i].data_mut()[c] = orig + k * h;
                let p = eval(&inputs, Some(&base.pattern))?;
                if !p.value.is_finite() {
                    inputs[i].data_mut()[c] = orig;
                    return Err(DiffError::NonFinite("grad_check").into());
                }
                acc += w * p.value;
            }
            inputs[i].data_mut()[c] = orig;
            let numeric = acc / h;
            let a = base.grads[i].data()[c];
            if !a.is_finite() {
                return Err(DiffError::NonFinite("grad_check").into());
            }
            max_rel = max_rel.max(rel_error(a, numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error: max_rel,
        tested_shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
        seed,
        checked,
    })
}

/// Gradient check of a single graph op on random inputs drawn from
/// `[-1, 1]`, kept at least `1e-3` away from zero so piecewise-linear ops are
/// not probed at their kink. The objective is `sum(op(x) * r)` for a random
/// cotangent `r`.
pub fn grad_check(
    op_name: &str,
    op: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, DiffError>,
    input_shapes: &[Vec<usize>],
    seed: u64,
) -> Result<GradCheckReport, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = input_shapes
        .iter()
        .map(|shape| {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| loop {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    if v.abs() > KINK_MARGIN {
                        break v;
                    }
                })
                .collect();
            Tensor::new(shape.clone(), data)
        })
        .collect::<Result<_, _>>()?;

    let mut cotangent: Option<Tensor<f64>> = None;
    let mut cot_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    check_gradients(op_name, inputs, seed, None, |xs| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = op(&mut g, &vars)?;
        let shape = g.shape(out).to_vec();
        let r = cotangent.get_or_insert_with(|| {
            let n = shape.iter().product();
            Tensor::new(shape.clone(), (0..n).map(|_| cot_rng.gen_range(-1.0..1.0)).collect())
                .expect("cotangent shape")
        });
        if r.shape() != shape.as_slice() {
            return Err(DiffError::shape("grad_check", "output shape changed between evaluations"));
        }
        let loss: f64 = g.value(out).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        g.backward_with(out, r.clone())?;
        let grads = vars
            .iter()
            .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect();
        Ok((loss, grads))
    })
}
