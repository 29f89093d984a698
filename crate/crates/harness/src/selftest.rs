//! Umbrella self-test: cost model, compression, fixtures and the ablation
//! health suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use slowfast_core::config::{GateMode, InitMode, Integration, QueryMode};
use slowfast_core::cost::{
    billions_2dp, cost_report, cross_attn_flops, cross_attn_flops_parts, table7_report, Arch, CostConfig,
};
use slowfast_core::tokens::{compress_fast_frames, FrameConfig, FrameFeatures};
use slowfast_core::Tensor;

use crate::config::RunConfig;
use crate::fixture::{decode, encode, Precision};
use crate::health::{run_variant, HealthOptions};
use crate::oracle::compress_frames;
use crate::variants::cartesian;

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> SelfCheck {
    SelfCheck {
        name: name.into(),
        passed,
        detail,
    }
}

pub fn cost_checks(cost: &CostConfig) -> Vec<SelfCheck> {
    let mut out = Vec::new();
    match table7_report(cost) {
        Ok(t) => {
            let worst_llm = t.rows.iter().map(|r| r.llm_rel_err).fold(0.0, f64::max);
            let worst_ca = t.rows.iter().filter_map(|r| r.ca_rel_err).fold(0.0, f64::max);
            out.push(check(
                "table_flops",
                t.all_within(),
                format!("worst llm err {:.2}%, worst ca err {:.2}%", worst_llm * 100.0, worst_ca * 100.0),
            ));
            let base = billions_2dp(t.params_base);
            let total = billions_2dp(t.params_total);
            let pct = (t.params_increase * 1000.0).round() / 10.0;
            out.push(check(
                "param_accounting",
                base == 8.48 && total == 8.50 && pct == 0.2,
                format!("{base:.2}B -> {total:.2}B, +{} params ({pct:.1}%)", t.params_added),
            ));
        }
        Err(e) => out.push(check("table_flops", false, e.to_string())),
    }
    let lin = [1usize, 81, 1296, 5184, 7776].iter().all(|&n| {
        let a = cross_attn_flops_parts(&cost.model, n, 64, 64);
        let b = cross_attn_flops_parts(&cost.model, 2 * n, 64, 64);
        b.kv_projection == 2 * a.kv_projection
            && b.attention == 2 * a.attention
            && cross_attn_flops(&cost.model, 2 * n, 0) == 2.0 * cross_attn_flops(&cost.model, n, 0)
    });
    out.push(check("cross_cost_linear", lin, "doubling slow tokens doubles the slow-token terms".into()));
    let base = cost_report(cost, Arch::SelfAttn, 16, 16, cost.text_tokens);
    let sf = cost_report(cost, Arch::SlowFast, 96, 16, cost.text_tokens);
    match (base, sf) {
        (Ok(b), Ok(s)) => {
            let ratio = s.total_tflops() / b.total_tflops();
            out.push(check("slow_fast_96_vs_16", ratio <= 1.03, format!("ratio {ratio:.4}")));
        }
        _ => out.push(check("slow_fast_96_vs_16", false, "cost report failed".into())),
    }
    out
}

pub fn compression_checks(fuzz_cases: usize, seed: u64) -> Vec<SelfCheck> {
    let mut out = Vec::new();
    let named = [("64-s4", 16), ("64-p4", 16), ("96-p6", 16), ("128-s2p4", 16), ("48-s3", 16)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (s, want) in named {
        let got = s.parse::<FrameConfig>().map(|f| f.compression.fast_frames(f.input_frames));
        ok &= got.as_ref().is_ok_and(|&g| g == want);
        detail.push(format!("{s}->{}", got.map_or("err".into(), |g| g.to_string())));
    }
    out.push(check("named_frame_configs", ok, detail.join(" ")));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..fuzz_cases {
        let n = rng.random_range(1..=512);
        let (k, t, m) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=32));
        let (d, h, w) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2));
        let per = d * h * w;
        let data = Tensor::randn(&[n, d, h, w], 1.0, &mut rng);
        let frames: Vec<Vec<f64>> = data.data().chunks(per).map(<[f64]>::to_vec).collect();
        let cfg = slowfast_core::tokens::CompressionConfig::new(k, t, m).expect("positive strides");
        let got = compress_fast_frames(&FrameFeatures::new(data).expect("rank 4"), &cfg).expect("compresses");
        let want: Vec<f64> = compress_frames(&frames, k, t, m).into_iter().flatten().collect();
        if got.tensor().data() != want.as_slice() {
            mismatches += 1;
        }
    }
    out.push(check(
        "compression_oracle",
        mismatches == 0,
        format!("{fuzz_cases} fuzzed cases, {mismatches} mismatches"),
    ));
    out
}

pub fn fixture_checks() -> Vec<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut ok = true;
    for shape in [vec![], vec![3], vec![2, 5], vec![0, 4], vec![2, 1, 3], vec![2, 2, 1, 3]] {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3f32..1e3) as f64).collect();
        let t = Tensor::new(shape, vals).expect("shape matches");
        for p in [Precision::F32, Precision::F64] {
            ok &= decode(&encode(&t, p)).is_ok_and(|(back, q)| q == p && back.bit_eq(&t));
        }
    }
    vec![check("fixture_round_trip", ok, "ranks 0-4, widths 4 and 8".into())]
}

/// Health suite over the 27-variant gate × query × integration matrix with
/// gradient checks, plus warm-up identity over all 81 grid points.
pub fn ablation_checks(base: &RunConfig) -> Vec<SelfCheck> {
    let mut out = Vec::new();
    let grid = cartesian(&base.model, GateMode::ALL, QueryMode::ALL, Integration::ALL, &[]);
    let records: Vec<_> = grid.iter().map(|&v| run_variant(&base.model, v, HealthOptions::default())).collect();
    let failed: Vec<String> = records
        .iter()
        .zip(&grid)
        .filter(|(r, _)| !r.as_ref().is_ok_and(|r| r.passed))
        .map(|(_, v)| v.name())
        .collect();
    let worst = records
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter_map(|r| r.gradcheck.as_ref())
        .map(|g| g.worst())
        .fold(0.0, f64::max);
    out.push(check(
        "ablation_health",
        failed.is_empty(),
        format!("{} variants, worst gradient error {worst:.2e}, failed: {failed:?}", grid.len()),
    ));
    let full = cartesian(&base.model, GateMode::ALL, QueryMode::ALL, Integration::ALL, InitMode::ALL);
    let opts = HealthOptions {
        grad: None,
        ..HealthOptions::default()
    };
    let bad = full
        .iter()
        .filter(|&&v| {
            !run_variant(&base.model, v, opts)
                .is_ok_and(|r| r.checks.iter().find(|c| c.name == "warmup_identity").is_some_and(|c| c.passed))
        })
        .count();
    out.push(check("warmup_identity_grid", bad == 0, format!("{} combinations, {bad} differ", full.len())));
    out
}

pub fn run_selftest(base: &RunConfig) -> Vec<SelfCheck> {
    let mut all = cost_checks(&CostConfig::reference());
    all.extend(compression_checks(1000, base.seed));
    all.extend(fixture_checks());
    all.extend(ablation_checks(base));
    all
}
