//! Finite-difference verification of the stack's backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::GateMode;
use crate::decoder::layout::HiddenState;
use crate::decoder::params::{Model, ParamGroup};
use crate::decoder::stack::{decoder_stack_backward, decoder_stack_forward, ModelGrads};
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_at, relative_error, Tensor};

/// Largest relative error accepted by [`GradCheckReport::passed`].
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per parameter tensor (all of them if smaller).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            samples: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub group: String,
    pub worst_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    /// Groups that have no parameters in this configuration.
    pub absent: Vec<String>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.worst_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= GRAD_TOLERANCE
    }

    pub fn group(&self, name: &str) -> Option<&GroupCheck> {
        self.groups.iter().find(|g| g.group == name)
    }
}

/// `Σ hidden ∘ probe` over the final-normed hidden states.
pub fn stack_loss(model: &Model, h0: &HiddenState, slow: &Tensor, probe: &Tensor) -> Result<f64> {
    let out = decoder_stack_forward(model, h0, slow)?;
    Ok(out.hidden.x.dot(probe))
}

/// Analytic gradients of [`stack_loss`].
pub fn stack_grads(model: &Model, h0: &HiddenState, slow: &Tensor, probe: &Tensor) -> Result<ModelGrads> {
    let out = decoder_stack_forward(model, h0, slow)?;
    decoder_stack_backward(model, &out.cache, probe)
}

fn coords(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= n {
        (0..len).collect()
    } else {
        let mut c = sample(rng, len, n).into_vec();
        c.sort_unstable();
        c
    }
}

fn record(groups: &mut Vec<GroupCheck>, name: &str, errs: &[f64]) {
    let worst = errs.iter().copied().fold(0.0, f64::max);
    match groups.iter_mut().find(|g| g.group == name) {
        Some(g) => {
            g.worst_rel_err = g.worst_rel_err.max(worst);
            g.checked += errs.len();
        }
        None => groups.push(GroupCheck {
            group: name.to_string(),
            worst_rel_err: worst,
            checked: errs.len(),
        }),
    }
}

/// Compare `grads` against central differences of [`stack_loss`] at sampled
/// coordinates of every parameter, the input and the slow tokens.
pub fn check_stack_gradients(
    model: &Model,
    h0: &HiddenState,
    slow: &Tensor,
    probe: &Tensor,
    grads: &ModelGrads,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut groups = Vec::new();
    for id in model.param_ids() {
        let p = model
            .param(id)
            .ok_or_else(|| Error::Usage(format!("no parameter {id:?}")))?
            .clone();
        let g = grads
            .get(id)
            .ok_or_else(|| Error::Usage(format!("no gradient recorded for {id:?}")))?;
        let cs = coords(p.len(), opts.samples, &mut rng);
        let mut scratch = model.clone();
        let numeric = finite_diff_at(
            |t: &Tensor| {
                *scratch.param_mut(id).expect("parameter exists") = t.clone();
                stack_loss(&scratch, h0, slow, probe)
            },
            &p,
            &cs,
            opts.eps,
        )?;
        let errs: Vec<f64> = cs.iter().zip(&numeric).map(|(&c, &n)| relative_error(g.data()[c], n)).collect();
        record(&mut groups, id.group().name(), &errs);
    }
    let cs = coords(h0.x.len(), opts.samples, &mut rng);
    let numeric = finite_diff_at(|t: &Tensor| stack_loss(model, &h0.with_x(t.clone()), slow, probe), &h0.x, &cs, opts.eps)?;
    let errs: Vec<f64> = cs.iter().zip(&numeric).map(|(&c, &n)| relative_error(grads.input.data()[c], n)).collect();
    record(&mut groups, "input", &errs);
    if !slow.is_empty() && !model.cfg.hybrid_indices.is_empty() {
        let cs = coords(slow.len(), opts.samples, &mut rng);
        let numeric = finite_diff_at(|t: &Tensor| stack_loss(model, h0, t, probe), slow, &cs, opts.eps)?;
        let errs: Vec<f64> = cs.iter().zip(&numeric).map(|(&c, &n)| relative_error(grads.slow.data()[c], n)).collect();
        record(&mut groups, "slow_tokens", &errs);
    }
    let mut absent = Vec::new();
    if model.cfg.gate_mode == GateMode::Static && !model.cfg.hybrid_indices.is_empty() {
        absent.push(ParamGroup::GateLinear.name().to_string());
    }
    Ok(GradCheckReport { groups, absent })
}

/// Shorthand: analytic gradients checked against finite differences.
pub fn gradcheck_stack(model: &Model, h0: &HiddenState, slow: &Tensor, probe: &Tensor, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let grads = stack_grads(model, h0, slow, probe)?;
    check_stack_gradients(model, h0, slow, probe, &grads, opts)
}
