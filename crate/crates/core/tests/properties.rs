use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slowfast_core::config::{GateMode, InitMode, Integration, ModelConfig, QueryMode};
use slowfast_core::cost::{cross_attn_flops, cross_attn_flops_parts, llm_forward_flops, CostConfig};
use slowfast_core::decoder::{
    build_sequence, decoder_stack_forward, stack_grads, BranchParam, CrossKind, HiddenState, HostParam, Model, ParamId,
    Segment, TrainStage,
};
use slowfast_core::numerics::{attend, HeadLayout};
use slowfast_core::tokens::{compress_fast_frames, spatial_pool_2x2, CompressionConfig, FrameFeatures};
use slowfast_core::Tensor;

fn cfg_for(gate: GateMode, query: QueryMode, integration: Integration, init: InitMode) -> ModelConfig {
    ModelConfig {
        num_layers: 3,
        hidden_dim: 16,
        num_heads: 4,
        num_kv_heads: 2,
        head_dim: 4,
        ffn_dim: 32,
        vocab_size: 8,
        hybrid_indices: vec![0, 2],
        gate_mode: gate,
        query_mode: query,
        integration,
        init_mode: init,
        ..ModelConfig::toy()
    }
}

fn inputs(d: usize, fast: usize, text: usize, slow: usize, seed: u64) -> (HiddenState, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h0 = build_sequence(&Tensor::randn(&[fast, d], 1.0, &mut rng), &Tensor::randn(&[text, d], 1.0, &mut rng)).unwrap();
    (h0, Tensor::randn(&[slow, d], 1.0, &mut rng))
}

fn open_gates(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.set_all_warmups(0.8);
    for b in model.branches.iter_mut().flatten() {
        if let Some(w) = b.gate.w.as_mut() {
            *w = Tensor::randn(w.shape(), 0.5, &mut rng);
        }
    }
    for s in model.standalone.iter_mut().flatten() {
        if let Some(w) = s.gate.w.as_mut() {
            *w = Tensor::randn(w.shape(), 0.5, &mut rng);
        }
    }
}

fn variant() -> impl Strategy<Value = ModelConfig> {
    (
        prop::sample::select(GateMode::ALL.to_vec()),
        prop::sample::select(QueryMode::ALL.to_vec()),
        prop::sample::select(Integration::ALL.to_vec()),
        prop::sample::select(InitMode::ALL.to_vec()),
    )
        .prop_map(|(g, q, i, m)| cfg_for(g, q, i, m))
}

/// Exhaustive over all 81 combinations rather than sampled.
#[test]
fn closed_warmups_match_host_stack_bitwise() {
    for &g in GateMode::ALL {
        for &q in QueryMode::ALL {
            for &i in Integration::ALL {
                for &m in InitMode::ALL {
                    let model = Model::seeded(&cfg_for(g, q, i, m), 2).unwrap();
                    let (h0, slow) = inputs(16, 4, 3, 5, 8);
                    let a = decoder_stack_forward(&model, &h0, &slow).unwrap();
                    let b = decoder_stack_forward(&model.without_cross(), &h0, &slow).unwrap();
                    assert!(a.hidden.x.bit_eq(&b.hidden.x), "{g}/{q}/{i}/{m}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn text_only_merge_leaves_fast_rows_untouched(
        gate in prop::sample::select(GateMode::ALL.to_vec()),
        init in prop::sample::select(InitMode::ALL.to_vec()),
        integration in prop::sample::select(Integration::ALL.to_vec()),
        fast in 1usize..6, text in 1usize..4, slow_n in 1usize..6, seed in 0u64..1000,
    ) {
        let mut model = Model::seeded(&cfg_for(gate, QueryMode::TextOnly, integration, init), seed).unwrap();
        open_gates(&mut model, seed);
        let (h0, slow) = inputs(16, fast, text, slow_n, seed + 1);
        let out = decoder_stack_forward(&model, &h0, &slow).unwrap();
        let fast_rows = h0.layout.positions_of(Segment::FastVisual);
        for &i in &model.cfg.hybrid_indices {
            if integration == Integration::Hybrid {
                let c = out.cache.layer_cache(i).unwrap();
                prop_assert!(c.after_merge().gather_rows(&fast_rows).bit_eq(&c.after_self_attn().gather_rows(&fast_rows)));
                let text_rows = h0.layout.positions_of(Segment::Text);
                prop_assert!(c.after_merge().gather_rows(&text_rows).max_abs_diff(&c.after_self_attn().gather_rows(&text_rows)) > 0.0);
            } else {
                let c = out.cache.standalone_cache(i).unwrap();
                let text_rows = h0.layout.positions_of(Segment::Text);
                prop_assert_eq!(c.query_rows(), text_rows.as_slice());
            }
        }
        for t in &out.traces {
            prop_assert!(t.rows.iter().all(|r| h0.layout.segments()[*r] == Segment::Text));
        }
    }

    #[test]
    fn slow_token_order_does_not_matter(cfg in variant(), slow_n in 2usize..7, seed in 0u64..1000) {
        let mut model = Model::seeded(&cfg, seed).unwrap();
        open_gates(&mut model, seed);
        let (h0, slow) = inputs(16, 3, 2, slow_n, seed + 2);
        let mut perm: Vec<usize> = (0..slow_n).collect();
        perm.rotate_left(1 + seed as usize % (slow_n - 1));
        perm.swap(0, slow_n - 1);
        let a = decoder_stack_forward(&model, &h0, &slow).unwrap();
        let b = decoder_stack_forward(&model, &h0, &slow.gather_rows(&perm)).unwrap();
        prop_assert!(a.hidden.x.max_abs_diff(&b.hidden.x) <= 1e-6);
    }

    #[test]
    fn later_positions_never_leak_backwards(cfg in variant(), fast in 0usize..4, text in 2usize..5, seed in 0u64..1000) {
        let mut model = Model::seeded(&cfg, seed).unwrap();
        open_gates(&mut model, seed);
        let (h0, slow) = inputs(16, fast, text, 3, seed + 3);
        let t = h0.len();
        let mut x = h0.x.clone();
        for v in x.row_mut(t - 1) {
            *v += 3.0;
        }
        let a = decoder_stack_forward(&model, &h0, &slow).unwrap();
        let b = decoder_stack_forward(&model, &h0.with_x(x), &slow).unwrap();
        let earlier: Vec<usize> = (0..t - 1).collect();
        prop_assert!(a.hidden.x.gather_rows(&earlier).bit_eq(&b.hidden.x.gather_rows(&earlier)));
    }

    #[test]
    fn attention_rows_are_distributions(cfg in variant(), seed in 0u64..1000) {
        let mut model = Model::seeded(&cfg, seed).unwrap();
        open_gates(&mut model, seed);
        let (h0, slow) = inputs(16, 3, 3, 4, seed + 4);
        let out = decoder_stack_forward(&model, &h0, &slow).unwrap();
        for tr in &out.traces {
            let m = slow.rows();
            for row in tr.weights.data().chunks(m) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
            if cfg.gate_mode != GateMode::Static {
                prop_assert!(tr.gates.data().iter().all(|g| g.abs() <= 1.0));
            }
            prop_assert_eq!(tr.kind == CrossKind::Hybrid, cfg.integration == Integration::Hybrid);
        }
        for i in 0..cfg.num_layers {
            let w = out.cache.layer_cache(i).unwrap().self_attention_weights();
            let t = h0.len();
            for (r, row) in w.data().chunks(t).enumerate() {
                let pos = r % t;
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                prop_assert!(row[pos + 1..].iter().all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn fuzzed_attention_invariants(tq in 1usize..6, tk in 1usize..8, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = HeadLayout::new(4, 2, 3).unwrap();
        let q = Tensor::randn(&[tq, 12], 2.0, &mut rng);
        let k = Tensor::randn(&[tk, 6], 2.0, &mut rng);
        let v = Tensor::randn(&[tk, 6], 1.0, &mut rng);
        let (ctx, probs) = attend(&q, &k, &v, layout, false).unwrap();
        for row in probs.data().chunks(tk) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        let perm: Vec<usize> = (0..tk).rev().collect();
        let (ctx2, _) = attend(&q, &k.gather_rows(&perm), &v.gather_rows(&perm), layout, false).unwrap();
        prop_assert!(ctx.max_abs_diff(&ctx2) <= 1e-6);
        if tq == tk {
            let (_, cp) = attend(&q, &k, &v, layout, true).unwrap();
            for (r, row) in cp.data().chunks(tk).enumerate() {
                prop_assert!(row[r % tq + 1..].iter().all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn forward_is_deterministic(cfg in variant(), seed in 0u64..1000) {
        let a = Model::seeded(&cfg, seed).unwrap();
        let b = Model::seeded(&cfg, seed).unwrap();
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        let (h0, slow) = inputs(16, 2, 2, 3, seed);
        let x = decoder_stack_forward(&a, &h0, &slow).unwrap();
        let y = decoder_stack_forward(&b, &h0, &slow).unwrap();
        prop_assert!(x.hidden.x.bit_eq(&y.hidden.x));
    }

    #[test]
    fn fast_tokens_keep_frame_means(n in 1usize..40, k in 1usize..4, t in 1usize..5, m in 1usize..20, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = FrameFeatures::new(Tensor::randn(&[n, 2, 4, 2], 1.0, &mut rng)).unwrap();
        let pooled = spatial_pool_2x2(&raw).unwrap();
        for f in 0..n {
            let a: f64 = raw.frame(f).iter().sum::<f64>() / 16.0;
            let b: f64 = pooled.frame(f).iter().sum::<f64>() / 4.0;
            prop_assert!((a - b).abs() < 1e-12);
        }
        let cfg = CompressionConfig::new(k, t, m).unwrap();
        let fast = compress_fast_frames(&pooled, &cfg).unwrap();
        prop_assert_eq!(fast.frames(), cfg.fast_frames(n));
        prop_assert!(fast.frames() >= m.min(cfg.sampled_len(n)));
        let lo = pooled.tensor().data().iter().cloned().fold(0.0_f64, f64::min);
        let hi = pooled.tensor().data().iter().cloned().fold(0.0_f64, f64::max);
        prop_assert!(fast.tensor().data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn cross_cost_is_linear_in_slow_tokens(n_slow in 1usize..100_000, n_text in 0usize..512) {
        let cfg = ModelConfig::reference_7b();
        let a = cross_attn_flops_parts(&cfg, n_slow, n_text, n_text);
        let b = cross_attn_flops_parts(&cfg, 2 * n_slow, n_text, n_text);
        prop_assert_eq!(b.kv_projection, 2 * a.kv_projection);
        prop_assert_eq!(b.attention, 2 * a.attention);
        prop_assert_eq!(b.gate, a.gate);
        if n_text == 0 {
            prop_assert_eq!(cross_attn_flops(&cfg, 2 * n_slow, 0), 2.0 * cross_attn_flops(&cfg, n_slow, 0));
        }
    }

    #[test]
    fn stack_cost_is_superlinear(n in 1usize..20_000) {
        let c = CostConfig::reference();
        let a = llm_forward_flops(&c, n).unwrap();
        let b = llm_forward_flops(&c, n + 1).unwrap();
        let two = llm_forward_flops(&c, 2 * n).unwrap();
        prop_assert!(b > a);
        prop_assert!(two > 2.0 * a);
    }
}

#[test]
fn copy_diverges_from_host_while_share_moves_it() {
    let (h0, slow) = inputs(16, 3, 2, 4, 1);
    let probe = Tensor::full(&[5, 16], 0.1);
    for init in [InitMode::Copy, InitMode::Share, InitMode::Random] {
        let mut model = Model::seeded(&cfg_for(GateMode::TokenDynamic, QueryMode::TextOnly, Integration::Hybrid, init), 5).unwrap();
        model.set_all_warmups(0.5);
        let before = model.clone();
        let grads = stack_grads(&model, &h0, &slow, &probe).unwrap();
        model.sgd_step(&grads, 0.1, TrainStage::CrossOnly).unwrap();
        let host_k = model.param(ParamId::Host(0, HostParam::Wk)).unwrap();
        let branch_k = model.param(ParamId::Branch(0, BranchParam::Wk)).unwrap();
        let host_before = before.param(ParamId::Host(0, HostParam::Wk)).unwrap();
        match init {
            InitMode::Share => {
                assert!(std::ptr::eq(host_k, branch_k));
                assert!(!host_k.bit_eq(host_before));
            }
            _ => {
                assert!(host_k.bit_eq(host_before));
                assert!(!branch_k.bit_eq(before.param(ParamId::Branch(0, BranchParam::Wk)).unwrap()));
                if init == InitMode::Copy {
                    assert!(before.param(ParamId::Branch(0, BranchParam::Wk)).unwrap().bit_eq(host_before));
                    assert!(!branch_k.bit_eq(host_k));
                }
            }
        }
        assert!(model.param(ParamId::Host(1, HostParam::Wq)).unwrap().bit_eq(before.param(ParamId::Host(1, HostParam::Wq)).unwrap()));
    }
}
