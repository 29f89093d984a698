//! Analytic forward-pass FLOPs and parameter counts.
//!
//! Every count is exact integer arithmetic in `u128`. One multiply-add is
//! two FLOPs; softmax and normalization work is not counted.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{GateMode, InitMode, Integration, ModelConfig, QueryMode};
use crate::error::{Error, Result};

const REFERENCE_JSON: &str = include_str!("../configs/reference_7b.json");

pub const TERA: f64 = 1e12;
pub const BILLION: f64 = 1e9;

/// Host model plus the constants needed to account for the whole system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub model: ModelConfig,
    /// Parameter count of the vision encoder, taken as given.
    pub vision_encoder_params: u64,
    /// Input width of the two-layer MLP projector (`in → d → d`, with biases).
    pub projector_input_dim: usize,
    /// Biases on the host q/k/v projections.
    pub qkv_bias: bool,
    pub tied_embeddings: bool,
    /// Count the LM head in the per-token projection term.
    pub count_lm_head: bool,
    pub tokens_per_frame: usize,
    /// Text positions appended after the visual tokens.
    pub text_tokens: usize,
}

impl CostConfig {
    /// The checked-in 7B-class reference configuration.
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE_JSON).expect("checked-in reference config parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.tokens_per_frame == 0 {
            return Err(Error::Config("tokens_per_frame must be positive".into()));
        }
        Ok(())
    }
}

fn u(x: usize) -> u128 {
    x as u128
}

/// Parameter counts of every part of the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub per_layer: u128,
    pub layers: u128,
    pub final_norm: u128,
    pub embedding: u128,
    pub lm_head: u128,
    /// All host LLM parameters.
    pub llm: u128,
    pub projector: u128,
    pub vision_encoder: u128,
    /// Parameters introduced by the cross-attention additions.
    pub added: u128,
    pub total: u128,
}

impl ParamBreakdown {
    /// Layers plus final norm.
    pub fn non_embedding(&self) -> u128 {
        self.layers + self.final_norm
    }

    /// Total without the additions.
    pub fn base(&self) -> u128 {
        self.total - self.added
    }
}

/// One host decoder layer: attention, two norms, SwiGLU FFN.
pub fn layer_params(cfg: &ModelConfig, qkv_bias: bool) -> u128 {
    let (d, q, kv, f) = (u(cfg.hidden_dim), u(cfg.q_width()), u(cfg.kv_width()), u(cfg.ffn_dim));
    let bias = if qkv_bias { q + 2 * kv } else { 0 };
    d * q + 2 * d * kv + bias + q * d + 2 * d + 3 * d * f
}

fn gate_params(cfg: &ModelConfig) -> u128 {
    let d = u(cfg.hidden_dim);
    match cfg.gate_mode {
        GateMode::Static => 1,
        GateMode::TokenDynamic => d + 1 + 1,
        GateMode::ChannelDynamic => d * d + d + 1,
    }
}

/// New parameters per listed layer, given the integration and init modes.
/// Aliased (`share`) projections add nothing.
pub fn added_params_per_layer(cfg: &ModelConfig) -> u128 {
    let (d, q, kv, f) = (u(cfg.hidden_dim), u(cfg.q_width()), u(cfg.kv_width()), u(cfg.ffn_dim));
    let owned = cfg.init_mode != InitMode::Share;
    let kv_proj = if owned { 2 * d * kv } else { 0 };
    let gate = gate_params(cfg);
    match cfg.integration {
        Integration::Hybrid => kv_proj + gate,
        Integration::StandaloneNoffn | Integration::StandaloneFfn => {
            let qo = if owned { 2 * d * q } else { 0 };
            let ffn = if cfg.integration == Integration::StandaloneFfn {
                d + 3 * d * f + 1
            } else {
                0
            };
            d + qo + kv_proj + gate + ffn
        }
    }
}

pub fn added_params(cfg: &ModelConfig) -> u128 {
    u(cfg.hybrid_indices.len()) * added_params_per_layer(cfg)
}

pub fn param_breakdown(cost: &CostConfig) -> ParamBreakdown {
    let cfg = &cost.model;
    let d = u(cfg.hidden_dim);
    let per_layer = layer_params(cfg, cost.qkv_bias);
    let layers = u(cfg.num_layers) * per_layer;
    let embedding = u(cfg.vocab_size) * d;
    let lm_head = if cost.tied_embeddings { 0 } else { embedding };
    let llm = layers + d + embedding + lm_head;
    let p_in = u(cost.projector_input_dim);
    let projector = p_in * d + d + d * d + d;
    let vision_encoder = u128::from(cost.vision_encoder_params);
    let added = added_params(cfg);
    ParamBreakdown {
        per_layer,
        layers,
        final_norm: d,
        embedding,
        lm_head,
        llm,
        projector,
        vision_encoder,
        added,
        total: vision_encoder + projector + llm + added,
    }
}

/// `(total, added)`.
pub fn param_count(cost: &CostConfig) -> (u128, u128) {
    let p = param_breakdown(cost);
    (p.total, p.added)
}

/// Forward FLOPs of the host stack, split by term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LlmFlops {
    /// `2 · non-embedding params · n`
    pub projection: u128,
    /// `2 · d · vocab · n` when the LM head is counted.
    pub lm_head: u128,
    /// `2 · L · 2 · n² · (heads · head_dim)`
    pub attention: u128,
}

impl LlmFlops {
    pub fn total(&self) -> u128 {
        self.projection + self.lm_head + self.attention
    }
}

pub fn llm_flops_parts(cost: &CostConfig, n_tokens: usize) -> LlmFlops {
    let p = param_breakdown(cost);
    let n = u(n_tokens);
    let cfg = &cost.model;
    LlmFlops {
        projection: 2 * p.non_embedding() * n,
        lm_head: if cost.count_lm_head { 2 * u(cfg.hidden_dim) * u(cfg.vocab_size) * n } else { 0 },
        attention: 2 * u(cfg.num_layers) * 2 * n * n * u(cfg.q_width()),
    }
}

/// Forward FLOPs of the host stack over `n_tokens` positions.
pub fn llm_forward_flops(cost: &CostConfig, n_tokens: usize) -> Result<f64> {
    if n_tokens == 0 {
        return Err(Error::Usage("n_tokens must be at least 1".into()));
    }
    Ok(llm_flops_parts(cost, n_tokens).total() as f64)
}

/// Cross-attention FLOPs summed over the listed layers, split by term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct XattnFlops {
    pub kv_projection: u128,
    pub attention: u128,
    pub gate: u128,
    /// Stand-alone layers only: own query and output projections.
    pub qo_projection: u128,
    /// Stand-alone layers with FFN only.
    pub ffn: u128,
}

impl XattnFlops {
    pub fn total(&self) -> u128 {
        self.kv_projection + self.attention + self.gate + self.qo_projection + self.ffn
    }
}

/// `n_query` rows attend over `n_slow` slow tokens in each listed layer.
/// `n_all` is the full sequence length, used by stand-alone FFNs.
pub fn cross_attn_flops_parts(cfg: &ModelConfig, n_slow: usize, n_query: usize, n_all: usize) -> XattnFlops {
    let layers = u(cfg.hybrid_indices.len());
    let (d, q, kv, f) = (u(cfg.hidden_dim), u(cfg.q_width()), u(cfg.kv_width()), u(cfg.ffn_dim));
    let (m, n) = (u(n_slow), u(n_query));
    let g_out = match cfg.gate_mode {
        GateMode::Static => 0,
        GateMode::TokenDynamic => 1,
        GateMode::ChannelDynamic => d,
    };
    let mut x = XattnFlops {
        kv_projection: layers * 2 * m * d * 2 * kv,
        attention: layers * 2 * 2 * n * m * q,
        gate: layers * 2 * n * d * g_out,
        ..XattnFlops::default()
    };
    if cfg.integration.is_standalone() {
        x.qo_projection = layers * 2 * n * d * q * 2;
    }
    if cfg.integration == Integration::StandaloneFfn {
        x.ffn = layers * 2 * u(n_all) * 3 * d * f;
    }
    x
}

/// Hybrid-layer cross-attention FLOPs for `n_text` querying rows.
pub fn cross_attn_flops(cfg: &ModelConfig, n_slow: usize, n_text: usize) -> f64 {
    cross_attn_flops_parts(cfg, n_slow, n_text, n_text).total() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    SelfAttn,
    SlowFast,
}

impl Arch {
    pub fn label(self) -> &'static str {
        match self {
            Arch::SelfAttn => "Self-attn",
            Arch::SlowFast => "Slow-Fast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub arch: Arch,
    pub slow_frames: usize,
    pub fast_frames: usize,
    pub text_tokens: usize,
    /// Visual tokens fed to the stack.
    pub tokens_in: u128,
    pub slow_tokens: u128,
    pub llm_flops: u128,
    pub xattn_flops: u128,
    pub params_total: u128,
    pub params_added: u128,
    pub breakdown: BTreeMap<String, u128>,
}

impl CostReport {
    pub fn total_flops(&self) -> u128 {
        self.llm_flops + self.xattn_flops
    }

    pub fn llm_tflops(&self) -> f64 {
        self.llm_flops as f64 / TERA
    }

    pub fn xattn_tflops(&self) -> f64 {
        self.xattn_flops as f64 / TERA
    }

    pub fn total_tflops(&self) -> f64 {
        self.total_flops() as f64 / TERA
    }

    pub fn breakdown_sum(&self) -> u128 {
        self.breakdown.values().sum()
    }
}

fn query_count(mode: QueryMode, visual: usize, text: usize) -> usize {
    match mode {
        QueryMode::All => visual + text,
        QueryMode::VisualOnly => visual,
        QueryMode::TextOnly => text,
    }
}

/// Cost of one forward pass. Self-attention feeds every frame's tokens to
/// the stack; slow-fast feeds `fast_frames` worth and cross-attends over
/// `slow_frames` worth.
pub fn cost_report(cost: &CostConfig, arch: Arch, slow_frames: usize, fast_frames: usize, text_tokens: usize) -> Result<CostReport> {
    cost.validate()?;
    let tpf = cost.tokens_per_frame;
    let (visual, slow) = match arch {
        Arch::SelfAttn => (slow_frames * tpf, 0),
        Arch::SlowFast => (fast_frames * tpf, slow_frames * tpf),
    };
    let n = visual + text_tokens;
    if n == 0 {
        return Err(Error::Usage("a forward pass needs at least one token".into()));
    }
    let llm = llm_flops_parts(cost, n);
    let mut model = cost.model.clone();
    if arch == Arch::SelfAttn {
        model.hybrid_indices.clear();
    }
    let x = cross_attn_flops_parts(&model, slow, query_count(model.query_mode, visual, text_tokens), n);
    let params = param_breakdown(&CostConfig { model, ..cost.clone() });
    let breakdown: BTreeMap<String, u128> = [
        ("llm.projection", llm.projection),
        ("llm.lm_head", llm.lm_head),
        ("llm.attention", llm.attention),
        ("xattn.kv_projection", x.kv_projection),
        ("xattn.attention", x.attention),
        ("xattn.gate", x.gate),
        ("xattn.qo_projection", x.qo_projection),
        ("xattn.ffn", x.ffn),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    Ok(CostReport {
        arch,
        slow_frames,
        fast_frames: if arch == Arch::SelfAttn { slow_frames } else { fast_frames },
        text_tokens,
        tokens_in: u(visual),
        slow_tokens: u(slow),
        llm_flops: llm.total(),
        xattn_flops: x.total(),
        params_total: params.total,
        params_added: params.added,
        breakdown,
    })
}

/// Published efficiency-table values for one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PublishedRow {
    pub arch: Arch,
    pub slow_frames: usize,
    pub fast_frames: usize,
    pub tokens: u128,
    pub params_b: f64,
    /// Stack FLOPs, including the cross-attention for slow-fast rows.
    pub llm_tflops: f64,
    pub ca_tflops: Option<f64>,
}

pub const PUBLISHED: [PublishedRow; 6] = [
    PublishedRow { arch: Arch::SelfAttn, slow_frames: 16, fast_frames: 16, tokens: 1296, params_b: 8.48, llm_tflops: 19.64, ca_tflops: None },
    PublishedRow { arch: Arch::SelfAttn, slow_frames: 32, fast_frames: 32, tokens: 2592, params_b: 8.48, llm_tflops: 40.21, ca_tflops: None },
    PublishedRow { arch: Arch::SelfAttn, slow_frames: 64, fast_frames: 64, tokens: 5184, params_b: 8.48, llm_tflops: 85.57, ca_tflops: None },
    PublishedRow { arch: Arch::SelfAttn, slow_frames: 96, fast_frames: 96, tokens: 7776, params_b: 8.48, llm_tflops: 136.16, ca_tflops: None },
    PublishedRow { arch: Arch::SlowFast, slow_frames: 64, fast_frames: 16, tokens: 1296, params_b: 8.50, llm_tflops: 19.80, ca_tflops: Some(0.16) },
    PublishedRow { arch: Arch::SlowFast, slow_frames: 96, fast_frames: 16, tokens: 1296, params_b: 8.50, llm_tflops: 19.88, ca_tflops: Some(0.24) },
];

pub fn relative_error(model: f64, published: f64) -> f64 {
    (model - published).abs() / published.abs()
}

/// Round to two decimals of a billion.
pub fn billions_2dp(count: u128) -> f64 {
    (count as f64 / BILLION * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub report: CostReport,
    pub published: PublishedRow,
    /// Compared against the published LLM column: stack plus cross-attention.
    pub model_llm_tflops: f64,
    pub model_ca_tflops: Option<f64>,
    pub model_params_b: f64,
    pub llm_rel_err: f64,
    pub ca_rel_err: Option<f64>,
}

impl TableRow {
    pub fn frames_label(&self) -> String {
        match self.published.arch {
            Arch::SelfAttn => self.published.slow_frames.to_string(),
            Arch::SlowFast => format!("{}/{}", self.published.slow_frames, self.published.fast_frames),
        }
    }

    pub fn within(&self, llm_tol: f64, ca_tol: f64) -> bool {
        self.llm_rel_err <= llm_tol
            && self.ca_rel_err.is_none_or(|e| e <= ca_tol)
            && self.report.tokens_in == self.published.tokens
            && (self.model_params_b - self.published.params_b).abs() < 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyTable {
    pub text_tokens: usize,
    pub rows: Vec<TableRow>,
    pub params_base: u128,
    pub params_total: u128,
    pub params_added: u128,
    /// `added / base`
    pub params_increase: f64,
}

pub const LLM_TOLERANCE: f64 = 0.05;
pub const CA_TOLERANCE: f64 = 0.10;

impl EfficiencyTable {
    pub fn all_within(&self) -> bool {
        self.rows.iter().all(|r| r.within(LLM_TOLERANCE, CA_TOLERANCE))
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10} {:>7} {:>8} {:>8} {:>7}",
            "arch", "frames", "tokens", "params", "ref", "llm_tf", "ref", "err", "ca_tf", "ref", "err"
        );
        for r in &self.rows {
            let (ca, pca, eca) = match (r.model_ca_tflops, r.published.ca_tflops, r.ca_rel_err) {
                (Some(m), Some(p), Some(e)) => (format!("{m:.2}"), format!("{p:.2}"), format!("{:.2}%", e * 100.0)),
                _ => ("-".into(), "-".into(), "-".into()),
            };
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>8} {:>7.2}B {:>7.2}B {:>10.2} {:>10.2} {:>6.2}% {:>8} {:>8} {:>7}",
                r.published.arch.label(),
                r.frames_label(),
                r.report.tokens_in,
                r.model_params_b,
                r.published.params_b,
                r.model_llm_tflops,
                r.published.llm_tflops,
                r.llm_rel_err * 100.0,
                ca,
                pca,
                eca
            );
        }
        let _ = writeln!(
            s,
            "text_tokens={} params_base={} params_total={} params_added={} increase={:.3}%",
            self.text_tokens,
            self.params_base,
            self.params_total,
            self.params_added,
            self.params_increase * 100.0
        );
        s
    }
}

/// All six published rows with the configured number of text tokens.
pub fn table7_report(cost: &CostConfig) -> Result<EfficiencyTable> {
    table7_report_with_text(cost, cost.text_tokens)
}

pub fn table7_report_with_text(cost: &CostConfig, text_tokens: usize) -> Result<EfficiencyTable> {
    let mut rows = Vec::with_capacity(PUBLISHED.len());
    for p in PUBLISHED {
        let report = cost_report(cost, p.arch, p.slow_frames, p.fast_frames, text_tokens)?;
        let model_llm = report.total_tflops();
        let model_ca = (p.arch == Arch::SlowFast).then(|| report.xattn_tflops());
        rows.push(TableRow {
            model_params_b: billions_2dp(report.params_total),
            llm_rel_err: relative_error(model_llm, p.llm_tflops),
            ca_rel_err: model_ca.zip(p.ca_tflops).map(|(m, q)| relative_error(m, q)),
            model_llm_tflops: model_llm,
            model_ca_tflops: model_ca,
            published: p,
            report,
        });
    }
    let params = param_breakdown(cost);
    Ok(EfficiencyTable {
        text_tokens,
        rows,
        params_base: params.base(),
        params_total: params.total,
        params_added: params.added,
        params_increase: params.added as f64 / params.base() as f64,
    })
}
