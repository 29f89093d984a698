//! Parameter containers for host decoder layers and the cross-attention
//! additions, with the RANDOM/SHARE/COPY initialization schemes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{GateMode, InitMode, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{AttentionParams, FfnParams, Tensor};

/// Standard deviation of randomly initialized new parameters.
pub const NEW_PARAM_STD: f64 = 0.02;

/// A pretrained decoder layer: pre-norm self-attention then pre-norm FFN.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub input_norm: Tensor,
    pub attn: AttentionParams,
    pub post_norm: Tensor,
    pub ffn: FfnParams,
}

/// One of the four host self-attention projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HostSlot {
    Q,
    K,
    V,
    O,
}

impl HostSlot {
    pub fn of(self, attn: &AttentionParams) -> &Tensor {
        match self {
            HostSlot::Q => &attn.w_q,
            HostSlot::K => &attn.w_k,
            HostSlot::V => &attn.w_v,
            HostSlot::O => &attn.w_o,
        }
    }
}

/// A projection that either owns its storage or aliases a host projection.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Owned(Tensor),
    Shared(HostSlot),
}

impl Weight {
    pub fn resolve<'a>(&'a self, host: &'a AttentionParams) -> &'a Tensor {
        match self {
            Weight::Owned(t) => t,
            Weight::Shared(slot) => slot.of(host),
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, Weight::Shared(_))
    }
}

/// Gate on the cross-attention residual.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub mode: GateMode,
    /// `d × g_out`; absent for the static gate.
    pub w: Option<Tensor>,
    /// `g_out`; absent for the static gate.
    pub b: Option<Tensor>,
    /// Warm-up factor `g_s`, shape `[1]`.
    pub warmup: Tensor,
}

impl GateParams {
    pub fn init(mode: GateMode, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let width = match mode {
            GateMode::Static => 0,
            GateMode::TokenDynamic => 1,
            GateMode::ChannelDynamic => d,
        };
        let (w, b) = if width == 0 {
            (None, None)
        } else {
            (
                Some(Tensor::randn(&[d, width], NEW_PARAM_STD, rng)),
                Some(Tensor::zeros(&[width])),
            )
        };
        Self {
            mode,
            w,
            b,
            warmup: Tensor::scalar(0.0),
        }
    }

    pub fn warmup(&self) -> f64 {
        self.warmup.data()[0]
    }

    pub fn set_warmup(&mut self, v: f64) {
        self.warmup.data_mut()[0] = v;
    }
}

/// Key/value projections and gate added to a hybrid decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossBranch {
    pub wk: Weight,
    pub wv: Weight,
    pub gate: GateParams,
}

/// View of a hybrid layer: host parameters plus the cross branch.
#[derive(Debug, Clone, Copy)]
pub struct HybridLayerParams<'a> {
    pub host: &'a DecoderLayerParams,
    pub branch: &'a CrossBranch,
}

impl HybridLayerParams<'_> {
    pub fn xattn_wk(&self) -> &Tensor {
        self.branch.wk.resolve(&self.host.attn)
    }

    pub fn xattn_wv(&self) -> &Tensor {
        self.branch.wv.resolve(&self.host.attn)
    }
}

/// Feed-forward block of a stand-alone layer, gated by its own warm-up scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedFfn {
    pub norm: Tensor,
    pub ffn: FfnParams,
    pub warmup: Tensor,
}

/// A cross-attention layer inserted in front of a host layer.
///
/// Shared weights resolve against that following host layer's self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct StandaloneLayer {
    pub norm: Tensor,
    pub wq: Weight,
    pub wk: Weight,
    pub wv: Weight,
    pub wo: Weight,
    pub gate: GateParams,
    pub ffn: Option<GatedFfn>,
}

/// Derive the cross-attention key/value projections from a host layer.
///
/// Returns `(wk, wv, aliased)`; `aliased` is true only for `Share`.
pub fn init_cross_attn(host: &AttentionParams, mode: InitMode, seed: u64) -> (Weight, Weight, bool) {
    match mode {
        InitMode::Share => (Weight::Shared(HostSlot::K), Weight::Shared(HostSlot::V), true),
        InitMode::Copy => (
            Weight::Owned(host.w_k.clone()),
            Weight::Owned(host.w_v.clone()),
            false,
        ),
        InitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let wk = Tensor::randn(host.w_k.shape(), NEW_PARAM_STD, &mut rng);
            let wv = Tensor::randn(host.w_v.shape(), NEW_PARAM_STD, &mut rng);
            (Weight::Owned(wk), Weight::Owned(wv), false)
        }
    }
}

fn init_projection(host: &AttentionParams, slot: HostSlot, mode: InitMode, rng: &mut ChaCha8Rng) -> Weight {
    match mode {
        InitMode::Share => Weight::Shared(slot),
        InitMode::Copy => Weight::Owned(slot.of(host).clone()),
        InitMode::Random => Weight::Owned(Tensor::randn(slot.of(host).shape(), NEW_PARAM_STD, rng)),
    }
}

fn layer_rng(seed: u64, layer: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer as u64 * 8 + stream);
    rng
}

/// Parameter addressing used by finite-difference checks and optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Host(usize, HostParam),
    Branch(usize, BranchParam),
    Standalone(usize, StandaloneParam),
    FinalNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HostParam {
    InputNorm,
    Wq,
    Wk,
    Wv,
    Wo,
    PostNorm,
    FfnGate,
    FfnUp,
    FfnDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BranchParam {
    Wk,
    Wv,
    GateW,
    GateB,
    Warmup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StandaloneParam {
    Norm,
    Wq,
    Wk,
    Wv,
    Wo,
    GateW,
    GateB,
    Warmup,
    FfnNorm,
    FfnGate,
    FfnUp,
    FfnDown,
    FfnWarmup,
}

/// Named groups reported by gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    XattnWk,
    XattnWv,
    XattnWq,
    XattnWo,
    GateLinear,
    Warmup,
    StandaloneNorm,
    StandaloneFfn,
    Host,
    FinalNorm,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::XattnWk => "xattn_wk",
            ParamGroup::XattnWv => "xattn_wv",
            ParamGroup::XattnWq => "xattn_wq",
            ParamGroup::XattnWo => "xattn_wo",
            ParamGroup::GateLinear => "gate_linear",
            ParamGroup::Warmup => "warmup",
            ParamGroup::StandaloneNorm => "standalone_norm",
            ParamGroup::StandaloneFfn => "standalone_ffn",
            ParamGroup::Host => "host",
            ParamGroup::FinalNorm => "final_norm",
        }
    }
}

impl ParamId {
    /// New cross-attention parameters are trainable in the first stage;
    /// everything pretrained is frozen there.
    pub fn is_new(&self) -> bool {
        matches!(self, ParamId::Branch(..) | ParamId::Standalone(..))
    }

    pub fn group(&self) -> ParamGroup {
        use StandaloneParam as S;
        match self {
            ParamId::Host(..) => ParamGroup::Host,
            ParamId::FinalNorm => ParamGroup::FinalNorm,
            ParamId::Branch(_, p) => match p {
                BranchParam::Wk => ParamGroup::XattnWk,
                BranchParam::Wv => ParamGroup::XattnWv,
                BranchParam::GateW | BranchParam::GateB => ParamGroup::GateLinear,
                BranchParam::Warmup => ParamGroup::Warmup,
            },
            ParamId::Standalone(_, p) => match p {
                S::Norm => ParamGroup::StandaloneNorm,
                S::Wq => ParamGroup::XattnWq,
                S::Wk => ParamGroup::XattnWk,
                S::Wv => ParamGroup::XattnWv,
                S::Wo => ParamGroup::XattnWo,
                S::GateW | S::GateB => ParamGroup::GateLinear,
                S::Warmup | S::FfnWarmup => ParamGroup::Warmup,
                S::FfnNorm | S::FfnGate | S::FfnUp | S::FfnDown => ParamGroup::StandaloneFfn,
            },
        }
    }
}

/// Which parameters an optimizer step may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    /// Only the cross-attention additions train.
    CrossOnly,
    Full,
}

/// All parameters of a decoder stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub layers: Vec<DecoderLayerParams>,
    /// Cross branch of each hybrid layer (hybrid integration only).
    pub branches: Vec<Option<CrossBranch>>,
    /// Layer inserted before host layer `i` (stand-alone integration only).
    pub standalone: Vec<Option<StandaloneLayer>>,
    pub final_norm: Tensor,
    /// `d × vocab` output embedding.
    pub lm_head: Tensor,
}

impl Model {
    /// Random stand-in for a pretrained host plus freshly initialized
    /// cross-attention additions. Host weights come from `seed`; new
    /// parameters from `cfg.init_seed`.
    pub fn seeded(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = 1.0 / (d as f64).sqrt();
        let sf = 1.0 / (cfg.ffn_dim as f64).sqrt();
        let sq = 1.0 / (cfg.q_width() as f64).sqrt();
        let norm = |rng: &mut ChaCha8Rng| {
            let mut t = Tensor::randn(&[d], 0.1, rng);
            t.data_mut().iter_mut().for_each(|v| *v += 1.0);
            t
        };
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for _ in 0..cfg.num_layers {
            let input_norm = norm(&mut rng);
            let attn = AttentionParams {
                w_q: Tensor::randn(&[d, cfg.q_width()], sd, &mut rng),
                w_k: Tensor::randn(&[d, cfg.kv_width()], sd, &mut rng),
                w_v: Tensor::randn(&[d, cfg.kv_width()], sd, &mut rng),
                w_o: Tensor::randn(&[cfg.q_width(), d], sq, &mut rng),
                num_heads: cfg.num_heads,
                num_kv_heads: cfg.num_kv_heads,
                head_dim: cfg.head_dim,
            };
            let post_norm = norm(&mut rng);
            let ffn = FfnParams {
                w_gate: Tensor::randn(&[d, cfg.ffn_dim], sd, &mut rng),
                w_up: Tensor::randn(&[d, cfg.ffn_dim], sd, &mut rng),
                w_down: Tensor::randn(&[cfg.ffn_dim, d], sf, &mut rng),
            };
            layers.push(DecoderLayerParams {
                input_norm,
                attn,
                post_norm,
                ffn,
            });
        }
        let final_norm = norm(&mut rng);
        let lm_head = Tensor::randn(&[d, cfg.vocab_size], sd, &mut rng);
        let mut model = Self {
            cfg: cfg.clone(),
            layers,
            branches: vec![None; cfg.num_layers],
            standalone: vec![None; cfg.num_layers],
            final_norm,
            lm_head,
        };
        model.init_additions()?;
        Ok(model)
    }

    /// (Re)build the cross-attention additions described by `self.cfg`.
    pub fn init_additions(&mut self) -> Result<()> {
        self.cfg.validate()?;
        let cfg = &self.cfg;
        let d = cfg.hidden_dim;
        self.branches = vec![None; cfg.num_layers];
        self.standalone = vec![None; cfg.num_layers];
        for &i in &cfg.hybrid_indices {
            let host = &self.layers[i];
            let mut gate_rng = layer_rng(cfg.init_seed, i, 1);
            let gate = GateParams::init(cfg.gate_mode, d, &mut gate_rng);
            if cfg.integration.is_standalone() {
                let mut rng = layer_rng(cfg.init_seed, i, 2);
                let ffn = match cfg.integration {
                    crate::config::Integration::StandaloneFfn => Some(GatedFfn {
                        norm: host.post_norm.clone(),
                        ffn: host.ffn.clone(),
                        warmup: Tensor::scalar(0.0),
                    }),
                    _ => None,
                };
                self.standalone[i] = Some(StandaloneLayer {
                    norm: host.input_norm.clone(),
                    wq: init_projection(&host.attn, HostSlot::Q, cfg.init_mode, &mut rng),
                    wk: init_projection(&host.attn, HostSlot::K, cfg.init_mode, &mut rng),
                    wv: init_projection(&host.attn, HostSlot::V, cfg.init_mode, &mut rng),
                    wo: init_projection(&host.attn, HostSlot::O, cfg.init_mode, &mut rng),
                    gate,
                    ffn,
                });
            } else {
                let seed = cfg.init_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
                let (wk, wv, _) = init_cross_attn(&host.attn, cfg.init_mode, seed);
                self.branches[i] = Some(CrossBranch { wk, wv, gate });
            }
        }
        Ok(())
    }

    pub fn hybrid_params(&self, layer: usize) -> Option<HybridLayerParams<'_>> {
        self.branches[layer].as_ref().map(|branch| HybridLayerParams {
            host: &self.layers[layer],
            branch,
        })
    }

    /// The same host stack with every cross-attention addition removed.
    pub fn without_cross(&self) -> Self {
        let mut m = self.clone();
        m.cfg.hybrid_indices.clear();
        m.branches = vec![None; m.layers.len()];
        m.standalone = vec![None; m.layers.len()];
        m
    }

    /// Set every warm-up scalar: the branch/stand-alone gates and the
    /// stand-alone FFN gates.
    pub fn set_all_warmups(&mut self, v: f64) {
        for b in self.branches.iter_mut().flatten() {
            b.gate.set_warmup(v);
        }
        for s in self.standalone.iter_mut().flatten() {
            s.gate.set_warmup(v);
            if let Some(f) = s.ffn.as_mut() {
                f.warmup.data_mut()[0] = v;
            }
        }
    }

    /// Every addressable parameter, in a fixed order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        use HostParam as H;
        use StandaloneParam as S;
        let mut ids = Vec::new();
        for (i, s) in self.standalone.iter().enumerate() {
            let Some(s) = s else { continue };
            ids.push(ParamId::Standalone(i, S::Norm));
            for p in [S::Wq, S::Wk, S::Wv, S::Wo] {
                ids.push(ParamId::Standalone(i, p));
            }
            if s.gate.w.is_some() {
                ids.push(ParamId::Standalone(i, S::GateW));
                ids.push(ParamId::Standalone(i, S::GateB));
            }
            ids.push(ParamId::Standalone(i, S::Warmup));
            if s.ffn.is_some() {
                for p in [S::FfnNorm, S::FfnGate, S::FfnUp, S::FfnDown, S::FfnWarmup] {
                    ids.push(ParamId::Standalone(i, p));
                }
            }
        }
        for i in 0..self.layers.len() {
            for p in [H::InputNorm, H::Wq, H::Wk, H::Wv, H::Wo, H::PostNorm, H::FfnGate, H::FfnUp, H::FfnDown] {
                ids.push(ParamId::Host(i, p));
            }
            if let Some(b) = &self.branches[i] {
                ids.push(ParamId::Branch(i, BranchParam::Wk));
                ids.push(ParamId::Branch(i, BranchParam::Wv));
                if b.gate.w.is_some() {
                    ids.push(ParamId::Branch(i, BranchParam::GateW));
                    ids.push(ParamId::Branch(i, BranchParam::GateB));
                }
                ids.push(ParamId::Branch(i, BranchParam::Warmup));
            }
        }
        ids.push(ParamId::FinalNorm);
        ids
    }

    /// The id that owns the storage behind `id` (SHARE aliases resolve to the host).
    pub fn storage_of(&self, id: ParamId) -> ParamId {
        let host_param = |slot: HostSlot| match slot {
            HostSlot::Q => HostParam::Wq,
            HostSlot::K => HostParam::Wk,
            HostSlot::V => HostParam::Wv,
            HostSlot::O => HostParam::Wo,
        };
        match id {
            ParamId::Branch(i, p @ (BranchParam::Wk | BranchParam::Wv)) => {
                let Some(b) = &self.branches[i] else { return id };
                let w = if p == BranchParam::Wk { &b.wk } else { &b.wv };
                match w {
                    Weight::Shared(slot) => ParamId::Host(i, host_param(*slot)),
                    Weight::Owned(_) => id,
                }
            }
            ParamId::Standalone(i, p @ (StandaloneParam::Wq | StandaloneParam::Wk | StandaloneParam::Wv | StandaloneParam::Wo)) => {
                let Some(s) = &self.standalone[i] else { return id };
                let w = match p {
                    StandaloneParam::Wq => &s.wq,
                    StandaloneParam::Wk => &s.wk,
                    StandaloneParam::Wv => &s.wv,
                    _ => &s.wo,
                };
                match w {
                    Weight::Shared(slot) => ParamId::Host(i, host_param(*slot)),
                    Weight::Owned(_) => id,
                }
            }
            other => other,
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        let owner = self.storage_of(id);
        match owner {
            ParamId::Host(i, p) => {
                let l = self.layers.get(i)?;
                Some(match p {
                    HostParam::InputNorm => &l.input_norm,
                    HostParam::Wq => &l.attn.w_q,
                    HostParam::Wk => &l.attn.w_k,
                    HostParam::Wv => &l.attn.w_v,
                    HostParam::Wo => &l.attn.w_o,
                    HostParam::PostNorm => &l.post_norm,
                    HostParam::FfnGate => &l.ffn.w_gate,
                    HostParam::FfnUp => &l.ffn.w_up,
                    HostParam::FfnDown => &l.ffn.w_down,
                })
            }
            ParamId::Branch(i, p) => {
                let b = self.branches.get(i)?.as_ref()?;
                match p {
                    BranchParam::Wk => owned(&b.wk),
                    BranchParam::Wv => owned(&b.wv),
                    BranchParam::GateW => b.gate.w.as_ref(),
                    BranchParam::GateB => b.gate.b.as_ref(),
                    BranchParam::Warmup => Some(&b.gate.warmup),
                }
            }
            ParamId::Standalone(i, p) => {
                let s = self.standalone.get(i)?.as_ref()?;
                use StandaloneParam as S;
                match p {
                    S::Norm => Some(&s.norm),
                    S::Wq => owned(&s.wq),
                    S::Wk => owned(&s.wk),
                    S::Wv => owned(&s.wv),
                    S::Wo => owned(&s.wo),
                    S::GateW => s.gate.w.as_ref(),
                    S::GateB => s.gate.b.as_ref(),
                    S::Warmup => Some(&s.gate.warmup),
                    S::FfnNorm => s.ffn.as_ref().map(|f| &f.norm),
                    S::FfnGate => s.ffn.as_ref().map(|f| &f.ffn.w_gate),
                    S::FfnUp => s.ffn.as_ref().map(|f| &f.ffn.w_up),
                    S::FfnDown => s.ffn.as_ref().map(|f| &f.ffn.w_down),
                    S::FfnWarmup => s.ffn.as_ref().map(|f| &f.warmup),
                }
            }
            ParamId::FinalNorm => Some(&self.final_norm),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        let owner = self.storage_of(id);
        match owner {
            ParamId::Host(i, p) => {
                let l = self.layers.get_mut(i)?;
                Some(match p {
                    HostParam::InputNorm => &mut l.input_norm,
                    HostParam::Wq => &mut l.attn.w_q,
                    HostParam::Wk => &mut l.attn.w_k,
                    HostParam::Wv => &mut l.attn.w_v,
                    HostParam::Wo => &mut l.attn.w_o,
                    HostParam::PostNorm => &mut l.post_norm,
                    HostParam::FfnGate => &mut l.ffn.w_gate,
                    HostParam::FfnUp => &mut l.ffn.w_up,
                    HostParam::FfnDown => &mut l.ffn.w_down,
                })
            }
            ParamId::Branch(i, p) => {
                let b = self.branches.get_mut(i)?.as_mut()?;
                match p {
                    BranchParam::Wk => owned_mut(&mut b.wk),
                    BranchParam::Wv => owned_mut(&mut b.wv),
                    BranchParam::GateW => b.gate.w.as_mut(),
                    BranchParam::GateB => b.gate.b.as_mut(),
                    BranchParam::Warmup => Some(&mut b.gate.warmup),
                }
            }
            ParamId::Standalone(i, p) => {
                let s = self.standalone.get_mut(i)?.as_mut()?;
                use StandaloneParam as S;
                match p {
                    S::Norm => Some(&mut s.norm),
                    S::Wq => owned_mut(&mut s.wq),
                    S::Wk => owned_mut(&mut s.wk),
                    S::Wv => owned_mut(&mut s.wv),
                    S::Wo => owned_mut(&mut s.wo),
                    S::GateW => s.gate.w.as_mut(),
                    S::GateB => s.gate.b.as_mut(),
                    S::Warmup => Some(&mut s.gate.warmup),
                    S::FfnNorm => s.ffn.as_mut().map(|f| &mut f.norm),
                    S::FfnGate => s.ffn.as_mut().map(|f| &mut f.ffn.w_gate),
                    S::FfnUp => s.ffn.as_mut().map(|f| &mut f.ffn.w_up),
                    S::FfnDown => s.ffn.as_mut().map(|f| &mut f.ffn.w_down),
                    S::FfnWarmup => s.ffn.as_mut().map(|f| &mut f.warmup),
                }
            }
            ParamId::FinalNorm => Some(&mut self.final_norm),
        }
    }

    /// Hash over every parameter, used to detect stale caches.
    pub fn fingerprint(&self) -> u64 {
        let mut acc = 0xcbf2_9ce4_8422_2325u64;
        for id in self.param_ids() {
            if self.storage_of(id) != id {
                acc = acc.rotate_left(3) ^ 0x5bd1_e995;
                continue;
            }
            if let Some(t) = self.param(id) {
                acc = acc.rotate_left(7) ^ t.fingerprint();
            }
        }
        acc
    }

    /// Plain gradient-descent step on every parameter trainable in `stage`.
    ///
    /// Aliased storage is updated once, with the combined gradient.
    pub fn sgd_step(&mut self, grads: &super::ModelGrads, lr: f64, stage: TrainStage) -> Result<()> {
        let mut done = std::collections::BTreeSet::new();
        for id in self.param_ids() {
            if stage == TrainStage::CrossOnly && !id.is_new() {
                continue;
            }
            let owner = self.storage_of(id);
            if !done.insert(owner) {
                continue;
            }
            let g = grads
                .get(id)
                .ok_or_else(|| Error::Usage(format!("no gradient recorded for {id:?}")))?
                .clone();
            let p = self
                .param_mut(id)
                .ok_or_else(|| Error::Usage(format!("no parameter {id:?}")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("sgd_step", p.shape(), g.shape()));
            }
            for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * d;
            }
        }
        Ok(())
    }
}

fn owned(w: &Weight) -> Option<&Tensor> {
    match w {
        Weight::Owned(t) => Some(t),
        Weight::Shared(_) => None,
    }
}

fn owned_mut(w: &mut Weight) -> Option<&mut Tensor> {
    match w {
        Weight::Owned(t) => Some(t),
        Weight::Shared(_) => None,
    }
}
