use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{KinkRecord, Tape, Tensor, Var};
use crate::error::Result;

/// A deterministic computation from a set of parameter tensors to a scalar
/// loss, used for finite-difference verification.
pub trait GradFragment {
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];

    fn param_name(&self, index: usize) -> String {
        format!("param{}", index)
    }

    /// Records the loss on `tape`. Returns the loss and the variables bound
    /// to each parameter tensor, in order.
    fn loss(&self, tape: &mut Tape) -> Result<(Var, Vec<Var>)>;
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Gradients below this magnitude are compared absolutely.
    pub floor: f64,
    /// Coordinates probed per parameter tensor (all when the tensor is smaller).
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tolerance: 1e-4, floor: 1e-5, coords_per_param: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

fn eval_loss(fragment: &dyn GradFragment, kinks: &Arc<KinkRecord>) -> Result<f64> {
    let mut tape = Tape::replaying_kinks(Arc::clone(kinks));
    let (loss, _) = fragment.loss(&mut tape)?;
    Ok(tape.value(loss)[0])
}

/// Compares analytic gradients of `fragment` with central finite
/// differences. Mismatches are reported per parameter tensor; only failures
/// to evaluate the fragment are errors.
///
/// Perturbed evaluations replay the ReLU masks and max-pool winners of the
/// unperturbed pass, so the differences measure the smooth piece the analytic
/// gradient belongs to even when a kink lies within the step.
pub fn grad_check(fragment: &mut dyn GradFragment, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut tape = Tape::recording_kinks();
    let (loss, vars) = fragment.loss(&mut tape)?;
    tape.backward(loss)?;
    let kinks = Arc::new(tape.take_kinks().unwrap_or_default());
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(fragment.params()).map(|(&v, p)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()])).collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entries = Vec::with_capacity(analytic.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = if n <= config.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, config.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut max_rel = 0.0f64;
        for &c in &coords {
            let orig = fragment.params()[pi].data()[c];
            fragment.params_mut()[pi].data_mut()[c] = orig + config.step;
            let up = eval_loss(fragment, &kinks)?;
            fragment.params_mut()[pi].data_mut()[c] = orig - config.step;
            let down = eval_loss(fragment, &kinks)?;
            fragment.params_mut()[pi].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * config.step);
            let a = grad[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
            max_rel = max_rel.max(if rel.is_nan() { f64::INFINITY } else { rel });
        }
        entries.push(GradCheckEntry { name: fragment.param_name(pi), checked: coords.len(), max_rel_error: max_rel, passed: max_rel <= config.tolerance });
    }
    Ok(GradCheckReport { entries, tolerance: config.tolerance })
}

/// Fragment built from a closure over bound parameter variables.
pub struct FnFragment<F> {
    params: Vec<Tensor>,
    names: Vec<String>,
    f: F,
}

impl<F> FnFragment<F>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    pub fn new(params: Vec<Tensor>, f: F) -> Self {
        let names = (0..params.len()).map(|i| format!("param{}", i)).collect();
        FnFragment { params, names, f }
    }

    pub fn named(mut self, names: &[&str]) -> Self {
        for (slot, n) in self.names.iter_mut().zip(names) {
            *slot = n.to_string();
        }
        self
    }
}

impl<F> GradFragment for FnFragment<F>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn param_name(&self, index: usize) -> String {
        self.names[index].clone()
    }

    fn loss(&self, tape: &mut Tape) -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p)).collect();
        let loss = (self.f)(tape, &vars)?;
        Ok((loss, vars))
    }
}
