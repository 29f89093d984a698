//! Mechanical health suite run for every ablation variant.

use serde::Serialize;
use slowfast_core::config::{ModelConfig, QueryMode};
use slowfast_core::decoder::{
    build_sequence, decoder_stack_forward, gradcheck_stack, GradCheckOptions, GradCheckReport, HiddenState, Model,
    Segment, StackOutput, GRAD_TOLERANCE,
};
use slowfast_core::Tensor;

use crate::synth::synth_text;
use crate::variants::Variant;
use crate::CliError;

pub const ROW_SUM_TOLERANCE: f64 = 1e-6;
pub const PERMUTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// False when the property does not apply to this variant.
    pub applicable: bool,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            applicable: true,
            passed: value <= tolerance,
            value,
            tolerance,
        }
    }

    fn skipped(name: &'static str) -> Self {
        Self {
            name,
            applicable: false,
            passed: true,
            value: 0.0,
            tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRecord {
    pub name: String,
    pub variant: Variant,
    pub seed: u64,
    pub config: ModelConfig,
    pub checks: Vec<Check>,
    pub gradcheck: Option<GradCheckReport>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct HealthOptions {
    pub seed: u64,
    /// Warm-up value used once the identity check is done.
    pub warmup: f64,
    pub grad: Option<GradCheckOptions>,
}

impl Default for HealthOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            warmup: 0.5,
            grad: Some(GradCheckOptions::default()),
        }
    }
}

/// Small synthetic input: 4 fast rows, 3 text rows, 6 slow tokens, and a
/// random probe defining the scalar loss.
pub struct ProbeInputs {
    pub h0: HiddenState,
    pub slow: Tensor,
    pub probe: Tensor,
}

pub fn probe_inputs(d: usize, seed: u64) -> ProbeInputs {
    let fast = synth_text(4, d, seed.wrapping_add(1));
    let text = synth_text(3, d, seed.wrapping_add(2));
    let slow = synth_text(6, d, seed.wrapping_add(3));
    let probe = synth_text(7, d, seed.wrapping_add(4)).scale(0.2);
    ProbeInputs {
        h0: build_sequence(&fast, &text).expect("non-empty text"),
        slow,
        probe,
    }
}

fn core(e: slowfast_core::Error) -> CliError {
    CliError::from_core(e)
}

fn row_sum_deviation(out: &StackOutput, model: &Model, t: usize, m: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for tr in &out.traces {
        for row in tr.weights.data().chunks(m) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    for i in 0..model.layers.len() {
        if let Some(c) = out.cache.layer_cache(i) {
            for row in c.self_attention_weights().data().chunks(t) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    worst
}

/// Largest change of any fast row across a cross-attention merge.
fn fast_row_change(out: &StackOutput, model: &Model, fast: &[usize]) -> f64 {
    let mut worst: f64 = 0.0;
    for &i in &model.cfg.hybrid_indices {
        if let Some(c) = out.cache.layer_cache(i) {
            if model.branches[i].is_some() {
                worst = worst.max(c.after_merge().gather_rows(fast).max_abs_diff(&c.after_self_attn().gather_rows(fast)));
            }
        }
        if let Some(c) = out.cache.standalone_cache(i) {
            worst = worst.max(c.after_merge().gather_rows(fast).max_abs_diff(&c.input().gather_rows(fast)));
        }
    }
    worst
}

pub fn run_variant(base: &ModelConfig, v: Variant, opts: HealthOptions) -> Result<VariantRecord, CliError> {
    let cfg = v.apply(base);
    let mut model = Model::seeded(&cfg, opts.seed).map_err(core)?;
    let inp = probe_inputs(cfg.hidden_dim, opts.seed);
    let (h0, slow) = (&inp.h0, &inp.slow);
    let (t, m) = (h0.len(), slow.rows());
    let mut checks = Vec::new();

    let closed = decoder_stack_forward(&model, h0, slow).map_err(core)?;
    let host = decoder_stack_forward(&model.without_cross(), h0, slow).map_err(core)?;
    let identical = closed.hidden.x.bit_eq(&host.hidden.x);
    checks.push(Check::at_most("warmup_identity", if identical { 0.0 } else { 1.0 }, 0.0));

    model.set_all_warmups(opts.warmup);
    let out = decoder_stack_forward(&model, h0, slow).map_err(core)?;
    checks.push(Check::at_most("forward_finite", if out.hidden.x.is_finite() { 0.0 } else { 1.0 }, 0.0));
    if cfg.query_mode == QueryMode::TextOnly {
        let fast = h0.layout.positions_of(Segment::FastVisual);
        checks.push(Check::at_most("fast_rows_unchanged", fast_row_change(&out, &model, &fast), 0.0));
    } else {
        checks.push(Check::skipped("fast_rows_unchanged"));
    }
    checks.push(Check::at_most("attention_row_sums", row_sum_deviation(&out, &model, t, m), ROW_SUM_TOLERANCE));

    let mut x = h0.x.clone();
    x.row_mut(t - 1).iter_mut().for_each(|v| *v += 2.5);
    let bumped = decoder_stack_forward(&model, &h0.with_x(x), slow).map_err(core)?;
    let earlier: Vec<usize> = (0..t - 1).collect();
    let leak = out.hidden.x.gather_rows(&earlier).max_abs_diff(&bumped.hidden.x.gather_rows(&earlier));
    checks.push(Check::at_most("causal_leakage", leak, 0.0));

    let perm: Vec<usize> = (0..m).rev().collect();
    let permuted = decoder_stack_forward(&model, h0, &slow.gather_rows(&perm)).map_err(core)?;
    checks.push(Check::at_most("slow_permutation", out.hidden.x.max_abs_diff(&permuted.hidden.x), PERMUTATION_TOLERANCE));

    let again = decoder_stack_forward(&model, h0, slow).map_err(core)?;
    checks.push(Check::at_most("determinism", if again.hidden.x.bit_eq(&out.hidden.x) { 0.0 } else { 1.0 }, 0.0));

    let gradcheck = match opts.grad {
        Some(g) => {
            let r = gradcheck_stack(&model, h0, slow, &inp.probe, g).map_err(core)?;
            checks.push(Check::at_most("gradcheck", r.worst(), GRAD_TOLERANCE));
            Some(r)
        }
        None => None,
    };
    let passed = checks.iter().all(|c| c.passed);
    Ok(VariantRecord {
        name: v.name(),
        variant: v,
        seed: opts.seed,
        config: cfg,
        checks,
        gradcheck,
        passed,
    })
}
