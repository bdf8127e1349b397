//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
    /// Coordinates sampled per tensor; `None` checks every coordinate.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-3, tolerance: 1e-3, floor: 1e-6, samples: None, seed: 0 }
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordFailure {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<CoordFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.failures.is_empty())
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }
}

fn pick(len: usize, samples: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match samples {
        Some(k) if k < len => {
            let mut idx = sample(rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

fn check_group(
    name: String,
    analytic: &[f64],
    coords: Vec<usize>,
    opts: &GradCheckOptions,
    mut eval_at: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GroupResult> {
    let mut result = GroupResult { name, checked: coords.len(), max_rel_err: 0.0, failures: Vec::new() };
    for i in coords {
        let plus = eval_at(i, opts.step)?;
        let minus = eval_at(i, -opts.step)?;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let err = relative_error(analytic[i], numeric, opts.floor);
        result.max_rel_err = result.max_rel_err.max(err);
        if err >= opts.tolerance {
            result.failures.push(CoordFailure { index: i, analytic: analytic[i], numeric, rel_err: err });
        }
    }
    Ok(result)
}

/// Checks the tape gradient of the scalar `f(inputs)` against central
/// differences, one group per input tensor.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F, opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let run = |values: &[Tensor<f64>], backward: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars = values.iter().map(|t| tape.leaf(t.clone(), true)).collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        if !backward {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .zip(values)
            .map(|(v, t)| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        Ok((value, grads))
    };
    let (_, analytic) = run(inputs, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut groups = Vec::with_capacity(inputs.len());
    for (g, grad) in analytic.iter().enumerate() {
        let coords = pick(grad.len(), opts.samples, &mut rng);
        let group = check_group(format!("input{g}"), grad, coords, opts, |i, h| {
            let mut shifted = inputs.to_vec();
            shifted[g].data_mut()[i] += h;
            run(&shifted, false).map(|r| r.0)
        })?;
        groups.push(group);
    }
    Ok(GradReport { tolerance: opts.tolerance, groups })
}

/// Checks the gradients stored on `store` (see [`ParamStore::load_grads`])
/// against central differences of `loss_at`, sampling coordinates of every
/// entry that carries a gradient.
pub fn check_store<F>(store: &ParamStore<f64>, mut loss_at: F, opts: &GradCheckOptions) -> Result<GradReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut scratch = store.clone();
    let mut groups = Vec::new();
    for (name, tensor) in store.iter() {
        let Some(analytic) = tensor.grad.as_ref() else { continue };
        let coords = pick(tensor.numel(), opts.samples, &mut rng);
        let group = check_group(name.to_string(), analytic, coords, opts, |i, h| {
            let original = scratch.get(name)?.data()[i];
            scratch.get_mut(name)?.data_mut()[i] = original + h;
            let value = loss_at(&scratch);
            scratch.get_mut(name)?.data_mut()[i] = original;
            value
        })?;
        groups.push(group);
    }
    Ok(GradReport { tolerance: opts.tolerance, groups })
}

/// `Σ y ⊙ r` for a fixed pseudo-random `r`, turning any tensor into a scalar
/// loss with non-uniform upstream gradient.
pub fn random_projection(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut init = super::Init::new(seed);
    let r = tape.input(init.uniform(shape, 1.0))?;
    let prod = tape.mul(y, r)?;
    tape.sum(prod)
}
