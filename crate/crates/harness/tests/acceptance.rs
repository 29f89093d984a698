//! Acceptance suite. Each criterion writes one PASS/FAIL line to stdout.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slowfast_core::config::{GateMode, InitMode, Integration, ModelConfig, QueryMode};
use slowfast_core::cost::{billions_2dp, cost_report, cross_attn_flops, cross_attn_flops_parts, param_count, Arch, CostConfig};
use slowfast_core::decoder::{
    build_sequence, decoder_stack_forward, gradcheck_stack, GradCheckOptions, HiddenState, Model, Segment,
};
use slowfast_core::numerics::{attend, HeadLayout};
use slowfast_core::tokens::{compress_fast_frames, CompressionConfig, FrameConfig, FrameFeatures};
use slowfast_core::Tensor;
use slowfast_harness::health::probe_inputs;

use common::{compress_oracle, run_in, snapshot, Frames, TINY_CONFIG};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn variants_27(base: &ModelConfig) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for &i in Integration::ALL {
        for &g in GateMode::ALL {
            for &q in QueryMode::ALL {
                out.push(ModelConfig {
                    gate_mode: g,
                    query_mode: q,
                    integration: i,
                    ..base.clone()
                });
            }
        }
    }
    out
}

fn inputs(d: usize, fast: usize, text: usize, slow: usize, rng: &mut ChaCha8Rng) -> (HiddenState, Tensor) {
    let h0 = build_sequence(&Tensor::randn(&[fast, d], 1.0, rng), &Tensor::randn(&[text, d], 1.0, rng)).unwrap();
    (h0, Tensor::randn(&[slow, d], 1.0, rng))
}

/// Open every gate: nonzero warm-ups and random gate weights.
fn open_gates(model: &mut Model, rng: &mut ChaCha8Rng) {
    model.set_all_warmups(0.7);
    for g in model
        .branches
        .iter_mut()
        .flatten()
        .map(|b| &mut b.gate)
        .chain(model.standalone.iter_mut().flatten().map(|s| &mut s.gate))
    {
        if let Some(w) = g.w.as_mut() {
            *w = Tensor::randn(w.shape(), 0.5, rng);
        }
    }
}

// Published efficiency-table values.
const SELF_ATTN_ROWS: [(usize, f64); 4] = [(16, 19.64), (32, 40.21), (64, 85.57), (96, 136.16)];
const SLOW_FAST_ROWS: [(usize, f64, f64); 2] = [(64, 19.80, 0.16), (96, 19.88, 0.24)];

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn table_flops() -> Outcome {
    let start = Instant::now();
    let cost = CostConfig::reference();
    let n_text = cost.text_tokens;
    let mut worst_llm: f64 = 0.0;
    let mut worst_ca: f64 = 0.0;
    for (frames, published) in SELF_ATTN_ROWS {
        let r = cost_report(&cost, Arch::SelfAttn, frames, frames, n_text).unwrap();
        worst_llm = worst_llm.max(rel(r.total_tflops(), published));
    }
    for (frames, pub_llm, pub_ca) in SLOW_FAST_ROWS {
        let r = cost_report(&cost, Arch::SlowFast, frames, 16, n_text).unwrap();
        worst_llm = worst_llm.max(rel(r.total_tflops(), pub_llm));
        worst_ca = worst_ca.max(rel(r.xattn_tflops(), pub_ca));
    }
    let elapsed = start.elapsed();
    outcome(
        worst_llm <= 0.05 && worst_ca <= 0.10 && elapsed < Duration::from_secs(1),
        format!(
            "worst llm err {:.2}% (<= 5%), worst ca err {:.2}% (<= 10%), {:.1} ms",
            worst_llm * 100.0,
            worst_ca * 100.0,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn param_accounting() -> Outcome {
    let cost = CostConfig::reference();
    let (total, added) = param_count(&cost);
    let base = total - added;
    let pct = added as f64 / total as f64 * 100.0;
    let passed = billions_2dp(base) == 8.48 && billions_2dp(total) == 8.50 && format!("{pct:.1}") == "0.2";
    outcome(passed, format!("{base} -> {total} (+{added}, {pct:.3}%)"))
}

fn warmup_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = ModelConfig::toy();
    let mut checked = 0;
    let mut failures = Vec::new();
    for cfg in variants_27(&base) {
        for &init in InitMode::ALL {
            let cfg = ModelConfig { init_mode: init, ..cfg.clone() };
            let mut model = Model::seeded(&cfg, 11).unwrap();
            model.set_all_warmups(0.0);
            let (h0, slow) = inputs(cfg.hidden_dim, 5, 4, 9, &mut rng);
            let a = decoder_stack_forward(&model, &h0, &slow).unwrap();
            let b = decoder_stack_forward(&model.without_cross(), &h0, &slow).unwrap();
            if !a.hidden.x.bit_eq(&b.hidden.x) {
                failures.push(format!("{}/{}/{}/{}", cfg.gate_mode, cfg.query_mode, cfg.integration, cfg.init_mode));
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(10),
        format!("{checked} variants bit-identical, {:.2} s {failures:?}", elapsed.as_secs_f64()),
    )
}

fn fast_rows_unchanged() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    let mut failures = Vec::new();
    let base = ModelConfig {
        query_mode: QueryMode::TextOnly,
        ..ModelConfig::toy()
    };
    for cfg in variants_27(&base).into_iter().filter(|c| c.query_mode == QueryMode::TextOnly) {
        for trial in 0..3 {
            let mut model = Model::seeded(&cfg, trial).unwrap();
            open_gates(&mut model, &mut rng);
            let (h0, slow) = inputs(cfg.hidden_dim, 6, 3, 7, &mut rng);
            let fast = h0.layout.positions_of(Segment::FastVisual);
            let text = h0.layout.positions_of(Segment::Text);
            let out = decoder_stack_forward(&model, &h0, &slow).unwrap();
            for &i in &cfg.hybrid_indices {
                let (before, after) = match cfg.integration {
                    Integration::Hybrid => {
                        let c = out.cache.layer_cache(i).unwrap();
                        (c.after_self_attn(), c.after_merge())
                    }
                    _ => {
                        let c = out.cache.standalone_cache(i).unwrap();
                        (c.input(), c.after_merge())
                    }
                };
                let same = before.gather_rows(&fast).bit_eq(&after.gather_rows(&fast));
                let moved = before.gather_rows(&text).max_abs_diff(&after.gather_rows(&text)) > 0.0;
                if !same || !moved {
                    failures.push(format!("{}/{} layer {i}", cfg.gate_mode, cfg.integration));
                }
                checked += 1;
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("{checked} merges leave fast rows bit-identical while text rows move {failures:?}"),
    )
}

fn to_frames(f: &FrameFeatures) -> Frames {
    (0..f.frames()).map(|i| f.frame(i).to_vec()).collect()
}

fn compression_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cases = 1200;
    let mut mismatches = Vec::new();
    for case in 0..cases {
        let n = rng.random_range(1..=512);
        let (k, t, m) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=32));
        let (d, h, w) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=3));
        let raw = Tensor::randn(&[n, d, h, w], 1.0, &mut rng);
        let frames = FrameFeatures::new(raw).unwrap();
        let cfg = CompressionConfig::new(k, t, m).unwrap();
        let got = to_frames(&compress_fast_frames(&frames, &cfg).unwrap());
        let want = compress_oracle(&to_frames(&frames), k, t, m);
        if got != want {
            mismatches.push(format!("case {case}: n={n} k={k} t={t} m={m}"));
        }
    }
    let mut named = Vec::new();
    for spec in ["64-s4", "64-p4", "96-p6", "128-s2p4", "48-s3"] {
        let fc: FrameConfig = spec.parse().unwrap();
        let raw = Tensor::randn(&[fc.input_frames, 2, 2, 2], 1.0, &mut rng);
        let frames = FrameFeatures::new(raw).unwrap();
        let out = compress_fast_frames(&frames, &fc.compression).unwrap();
        let c = &fc.compression;
        let want = compress_oracle(&to_frames(&frames), c.sample_stride, c.pool_stride, c.min_fast_frames);
        named.push((spec, out.frames(), to_frames(&out) == want));
    }
    let named_ok = named.iter().all(|&(_, n, eq)| n == 16 && eq);
    outcome(
        mismatches.is_empty() && named_ok,
        format!("{cases} fuzz cases exact, {} mismatches; named {named:?}", mismatches.len()),
    )
}

fn gradient_matrix() -> Outcome {
    let start = Instant::now();
    let base = ModelConfig::toy();
    let inp = probe_inputs(base.hidden_dim, 0);
    let opts = GradCheckOptions::default();
    let groups = ["xattn_wk", "xattn_wv", "gate_linear", "warmup"];
    let mut worst = [0.0f64; 4];
    let mut overall: f64 = 0.0;
    let mut missing = Vec::new();
    let variants = variants_27(&base);
    for cfg in &variants {
        let mut model = Model::seeded(cfg, 0).unwrap();
        model.set_all_warmups(0.5);
        let r = gradcheck_stack(&model, &inp.h0, &inp.slow, &inp.probe, opts).unwrap();
        overall = overall.max(r.worst());
        for (j, g) in groups.iter().enumerate() {
            match r.group(g) {
                Some(c) => worst[j] = worst[j].max(c.worst_rel_err),
                None if *g == "gate_linear" && cfg.gate_mode == GateMode::Static => {}
                None => missing.push(format!("{g} in {}/{}/{}", cfg.gate_mode, cfg.query_mode, cfg.integration)),
            }
        }
    }
    let elapsed = start.elapsed();
    let passed = worst.iter().all(|&e| e < 1e-4) && missing.is_empty() && elapsed < Duration::from_secs(120);
    outcome(
        passed,
        format!(
            "{} variants; wk {:.1e} wv {:.1e} gate {:.1e} warmup {:.1e} (all groups {:.1e}); {:.1} s {missing:?}",
            variants.len(),
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            overall,
            elapsed.as_secs_f64()
        ),
    )
}

fn linear_cost() -> Outcome {
    let cost = CostConfig::reference();
    let cfg = &cost.model;
    let mut exact = true;
    for n in [1usize, 81, 1296, 5184, 7776, 1 << 20] {
        exact &= cross_attn_flops(cfg, 2 * n, 0) / cross_attn_flops(cfg, n, 0) == 2.0;
        for n_text in [1usize, 64, 512] {
            let a = cross_attn_flops_parts(cfg, n, n_text, n_text);
            let b = cross_attn_flops_parts(cfg, 2 * n, n_text, n_text);
            exact &= b.kv_projection + b.attention == 2 * (a.kv_projection + a.attention);
        }
    }
    let base = cost_report(&cost, Arch::SelfAttn, 16, 16, cost.text_tokens).unwrap();
    let sf = cost_report(&cost, Arch::SlowFast, 96, 16, cost.text_tokens).unwrap();
    let ratio = sf.total_tflops() / base.total_tflops();
    let with_text = cross_attn_flops(cfg, 2 * 5184, 64) / cross_attn_flops(cfg, 5184, 64);
    outcome(
        exact && ratio <= 1.03,
        format!("slow-token cost doubles exactly ({with_text:.6} with 64 text gate rows); 96/16 vs 16-frame {ratio:.4}x"),
    )
}

fn attention_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut perm_err: f64 = 0.0;
    let mut sum_err: f64 = 0.0;
    let mut leak: f64 = 0.0;
    for _ in 0..500 {
        let (heads, kv) = [(4, 2), (4, 4), (6, 3), (2, 1)][rng.random_range(0..4)];
        let hd = rng.random_range(1..=5);
        let layout = HeadLayout::new(heads, kv, hd).unwrap();
        let (tq, tk) = (rng.random_range(1..=8), rng.random_range(1..=12));
        let q = Tensor::randn(&[tq, heads * hd], 2.0, &mut rng);
        let k = Tensor::randn(&[tk, kv * hd], 2.0, &mut rng);
        let v = Tensor::randn(&[tk, kv * hd], 1.0, &mut rng);
        let (ctx, probs) = attend(&q, &k, &v, layout, false).unwrap();
        for row in probs.data().chunks(tk) {
            sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let mut perm: Vec<usize> = (0..tk).collect();
        for i in (1..tk).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let (ctx2, _) = attend(&q, &k.gather_rows(&perm), &v.gather_rows(&perm), layout, false).unwrap();
        perm_err = perm_err.max(ctx.max_abs_diff(&ctx2));

        let t = tq.max(2);
        let qs = Tensor::randn(&[t, heads * hd], 2.0, &mut rng);
        let ks = Tensor::randn(&[t, kv * hd], 2.0, &mut rng);
        let vs = Tensor::randn(&[t, kv * hd], 1.0, &mut rng);
        let (c1, p1) = attend(&qs, &ks, &vs, layout, true).unwrap();
        let mut kb = ks.clone();
        let mut vb = vs.clone();
        for x in kb.row_mut(t - 1).iter_mut().chain(vb.row_mut(t - 1).iter_mut()) {
            *x += 5.0;
        }
        let (c2, _) = attend(&qs, &kb, &vb, layout, true).unwrap();
        let earlier: Vec<usize> = (0..t - 1).collect();
        leak = leak.max(c1.gather_rows(&earlier).max_abs_diff(&c2.gather_rows(&earlier)));
        for (r, row) in p1.data().chunks(t).enumerate() {
            leak = leak.max(row[r % t + 1..].iter().fold(0.0, |a, p| a.max(p.abs())));
            sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    for cfg in variants_27(&ModelConfig::toy()) {
        let mut model = Model::seeded(&cfg, 1).unwrap();
        open_gates(&mut model, &mut rng);
        let (h0, slow) = inputs(cfg.hidden_dim, 3, 3, 6, &mut rng);
        let reversed: Vec<usize> = (0..slow.rows()).rev().collect();
        let a = decoder_stack_forward(&model, &h0, &slow).unwrap();
        let b = decoder_stack_forward(&model, &h0, &slow.gather_rows(&reversed)).unwrap();
        perm_err = perm_err.max(a.hidden.x.max_abs_diff(&b.hidden.x));
        for tr in &a.traces {
            for row in tr.weights.data().chunks(slow.rows()) {
                sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        let t = h0.len();
        let mut x = h0.x.clone();
        for v in x.row_mut(t - 1) {
            *v -= 2.0;
        }
        let c = decoder_stack_forward(&model, &h0.with_x(x), &slow).unwrap();
        let earlier: Vec<usize> = (0..t - 1).collect();
        leak = leak.max(a.hidden.x.gather_rows(&earlier).max_abs_diff(&c.hidden.x.gather_rows(&earlier)));
    }
    let elapsed = start.elapsed();
    outcome(
        perm_err <= 1e-6 && sum_err <= 1e-6 && leak == 0.0 && elapsed < Duration::from_secs(60),
        format!(
            "permutation {perm_err:.1e}, row sums {sum_err:.1e}, leakage {leak:e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

const MATRIX: &str = r#"{"version": 1, "base": "toy", "seed": 2, "axes": {"gate_mode": ["static", "token_dynamic"], "integration": ["hybrid", "standalone_ffn"]}}"#;

/// Every command, run twice in separate directories with identical inputs.
fn cli_session() -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    std::fs::write(p.join("tiny.json"), TINY_CONFIG).map_err(|e| e.to_string())?;
    std::fs::write(p.join("matrix.json"), MATRIX).map_err(|e| e.to_string())?;
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--n", "64", "--d", "16", "--h", "3", "--w", "3", "--seed", "5", "--out", "frames.sftf"],
        vec!["compress", "--config", "64-p4", "--in", "frames.sftf", "--out", "tok"],
        vec![
            "forward", "--model", "tiny.json", "--slow", "tok.slow.sftf", "--fast", "tok.fast.sftf", "--text-len", "5",
            "--dump-attn", "attn", "--save-params", "params", "--out", "hidden.sftf",
        ],
        vec![
            "forward", "--model", "tiny.json", "--slow", "tok.slow.sftf", "--fast", "tok.fast.sftf", "--params", "params",
            "--override", "warmup=0.3", "--out", "hidden2.sftf",
        ],
        vec!["gradcheck", "--model", "tiny.json", "--modes", "static,visual_only", "--json", "grad.json"],
        vec!["flops", "--reference", "--json"],
        vec!["flops", "--frames", "16,32,64,96"],
        vec!["ablate", "--matrix", "matrix.json", "--out", "ablate", "--no-gradcheck"],
        vec!["selftest", "--model", "tiny.json"],
    ];
    let mut transcript = Vec::new();
    for args in &steps {
        let out = run_in(p, args);
        if !out.status.success() {
            return Err(format!("{} exited {:?}: {}", args[0], out.status.code(), String::from_utf8_lossy(&out.stderr)));
        }
        transcript.push((format!("stdout:{}", args.join(" ")), out.stdout));
    }
    for (path, bytes) in snapshot(p) {
        transcript.push((path.display().to_string(), bytes));
    }
    Ok(transcript)
}

fn cli_determinism() -> Outcome {
    match (cli_session(), cli_session()) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&str> = a
                .iter()
                .zip(&b)
                .filter(|(x, y)| x != y)
                .map(|(x, _)| x.0.as_str())
                .collect();
            outcome(
                a.len() == b.len() && differing.is_empty(),
                format!("{} outputs compared byte for byte, differing {differing:?}", a.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("1 efficiency table flops", table_flops),
        ("2 parameter accounting", param_accounting),
        ("3 warm-up identity", warmup_identity),
        ("4 fast-token immutability", fast_rows_unchanged),
        ("5 compression oracle", compression_oracle),
        ("6 gradient correctness", gradient_matrix),
        ("7 linear cross cost", linear_cost),
        ("8 attention invariants", attention_invariants),
        ("9 cli determinism", cli_determinism),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let o = f();
        let line = format!("{} {name}: {}\n", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
        if !o.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
