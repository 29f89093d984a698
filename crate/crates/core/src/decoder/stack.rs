use std::collections::BTreeMap;

use crate::decoder::layers::{
    hybrid_backward_with_ctx, hybrid_forward_with_ctx, standalone_backward_with_ctx,
    standalone_forward_with_ctx, standard_layer_backward, standard_layer_forward, LayerCache,
    LayerCtx, LayerGrads, StandaloneCache, StandaloneGrads,
};
use crate::decoder::layout::HiddenState;
use crate::decoder::params::{BranchParam, HostParam, HostSlot, Model, ParamId, StandaloneParam, Weight};
use crate::error::{Error, Result};
use crate::numerics::{matmul, rms_norm, rms_norm_backward, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossKind {
    Hybrid,
    Standalone,
}

/// Cross-attention activity of one layer, for inspection and dumps.
#[derive(Debug, Clone)]
pub struct CrossTrace {
    pub layer: usize,
    pub kind: CrossKind,
    pub rows: Vec<usize>,
    /// `[heads × rows × m]`
    pub weights: Tensor,
    /// Raw gate values (`[1]` for the static gate).
    pub gates: Tensor,
}

#[derive(Debug, Clone)]
enum Step {
    Standalone(usize, StandaloneCache),
    Layer(usize, LayerCache),
}

#[derive(Debug, Clone)]
pub struct StackCache {
    steps: Vec<Step>,
    pre_norm: Tensor,
    slow_shape: Vec<usize>,
    fingerprint: u64,
}

impl StackCache {
    pub fn layer_cache(&self, layer: usize) -> Option<&LayerCache> {
        self.steps.iter().find_map(|s| match s {
            Step::Layer(i, c) if *i == layer => Some(c),
            _ => None,
        })
    }

    pub fn standalone_cache(&self, layer: usize) -> Option<&StandaloneCache> {
        self.steps.iter().find_map(|s| match s {
            Step::Standalone(i, c) if *i == layer => Some(c),
            _ => None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StackOutput {
    /// Final-normed hidden states `[T × d]`.
    pub hidden: HiddenState,
    pub traces: Vec<CrossTrace>,
    pub cache: StackCache,
}

impl Model {
    /// `hidden · lm_head`: `[T × vocab]`.
    pub fn logits(&self, hidden: &Tensor) -> Result<Tensor> {
        matmul(hidden, &self.lm_head)
    }

    fn check_consistency(&self) -> Result<()> {
        let n = self.layers.len();
        if n != self.cfg.num_layers || self.branches.len() != n || self.standalone.len() != n {
            return Err(Error::Config(format!(
                "model has {n} layers but config declares {}",
                self.cfg.num_layers
            )));
        }
        self.cfg.validate()?;
        for i in 0..n {
            let listed = self.cfg.is_hybrid_index(i);
            let has = self.branches[i].is_some() || self.standalone[i].is_some();
            if listed != has {
                return Err(Error::Config(format!(
                    "layer {i}: cross-attention parameters do not match hybrid_indices"
                )));
            }
        }
        Ok(())
    }
}

/// Run every layer in order, then the final norm.
///
/// Hybrid integration applies the cross branch inside the listed layers;
/// stand-alone integration runs an inserted layer before each listed layer.
pub fn decoder_stack_forward(model: &Model, h0: &HiddenState, slow: &Tensor) -> Result<StackOutput> {
    model.check_consistency()?;
    let cfg = &model.cfg;
    let ctx = LayerCtx::from_config(cfg)?;
    if h0.x.rank() != 2 || h0.x.cols() != cfg.hidden_dim {
        return Err(Error::shape("decoder stack input", h0.x.shape(), &[h0.len(), cfg.hidden_dim]));
    }
    let rows = h0.layout.query_rows(cfg.query_mode);
    let mut h = h0.clone();
    let mut steps = Vec::new();
    let mut traces = Vec::new();
    for (i, host) in model.layers.iter().enumerate() {
        if let Some(s) = &model.standalone[i] {
            let (next, c) = standalone_forward_with_ctx(&h, slow, s, &host.attn, &rows, &ctx)?;
            if let (Some(w), Some(g)) = (c.cross_attention_weights(), c.gate_values()) {
                traces.push(CrossTrace {
                    layer: i,
                    kind: CrossKind::Standalone,
                    rows: c.query_rows().to_vec(),
                    weights: w.clone(),
                    gates: g.clone(),
                });
            }
            steps.push(Step::Standalone(i, c));
            h = next;
        }
        let (next, c) = match &model.branches[i] {
            Some(b) => hybrid_forward_with_ctx(&h, slow, host, b, &rows, &ctx)?,
            None => standard_layer_forward(&h, host, &ctx)?,
        };
        if let (Some(w), Some(g)) = (c.cross_attention_weights(), c.gate_values()) {
            traces.push(CrossTrace {
                layer: i,
                kind: CrossKind::Hybrid,
                rows: c.query_rows().to_vec(),
                weights: w.clone(),
                gates: g.clone(),
            });
        }
        steps.push(Step::Layer(i, c));
        h = next;
    }
    let pre_norm = h.x.clone();
    let out = rms_norm(&pre_norm, &model.final_norm, cfg.rms_eps)?;
    out.ensure_finite("decoder stack output")?;
    Ok(StackOutput {
        hidden: h.with_x(out),
        traces,
        cache: StackCache {
            steps,
            pre_norm,
            slow_shape: slow.shape().to_vec(),
            fingerprint: model.fingerprint(),
        },
    })
}

/// Gradients of a scalar loss with respect to every parameter and input.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    params: BTreeMap<ParamId, Tensor>,
    pub input: Tensor,
    pub slow: Tensor,
}

impl ModelGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.params.iter()
    }

    /// Test hook: perturb one recorded gradient, as a corrupted backward would.
    pub fn corrupt(&mut self, id: ParamId, delta: f64) {
        if let Some(t) = self.params.get_mut(&id) {
            for v in t.data_mut() {
                *v += delta;
            }
        }
    }
}

fn host_slot_param(slot: HostSlot) -> HostParam {
    match slot {
        HostSlot::Q => HostParam::Wq,
        HostSlot::K => HostParam::Wk,
        HostSlot::V => HostParam::Wv,
        HostSlot::O => HostParam::Wo,
    }
}

fn record_layer(params: &mut BTreeMap<ParamId, Tensor>, i: usize, g: LayerGrads) {
    use HostParam as H;
    let h = g.host;
    params.insert(ParamId::Host(i, H::InputNorm), h.input_norm);
    params.insert(ParamId::Host(i, H::Wq), h.w_q);
    params.insert(ParamId::Host(i, H::Wk), h.w_k);
    params.insert(ParamId::Host(i, H::Wv), h.w_v);
    params.insert(ParamId::Host(i, H::Wo), h.w_o);
    params.insert(ParamId::Host(i, H::PostNorm), h.post_norm);
    params.insert(ParamId::Host(i, H::FfnGate), h.ffn.w_gate);
    params.insert(ParamId::Host(i, H::FfnUp), h.ffn.w_up);
    params.insert(ParamId::Host(i, H::FfnDown), h.ffn.w_down);
    if let Some(b) = g.branch {
        params.insert(ParamId::Branch(i, BranchParam::Wk), b.wk);
        params.insert(ParamId::Branch(i, BranchParam::Wv), b.wv);
        if let (Some(w), Some(bb)) = (b.gate.w, b.gate.b) {
            params.insert(ParamId::Branch(i, BranchParam::GateW), w);
            params.insert(ParamId::Branch(i, BranchParam::GateB), bb);
        }
        params.insert(ParamId::Branch(i, BranchParam::Warmup), b.gate.warmup);
    }
}

fn record_standalone(params: &mut BTreeMap<ParamId, Tensor>, i: usize, g: StandaloneGrads) {
    use StandaloneParam as S;
    params.insert(ParamId::Standalone(i, S::Norm), g.norm);
    params.insert(ParamId::Standalone(i, S::Wq), g.wq);
    params.insert(ParamId::Standalone(i, S::Wk), g.wk);
    params.insert(ParamId::Standalone(i, S::Wv), g.wv);
    params.insert(ParamId::Standalone(i, S::Wo), g.wo);
    if let (Some(w), Some(b)) = (g.gate.w, g.gate.b) {
        params.insert(ParamId::Standalone(i, S::GateW), w);
        params.insert(ParamId::Standalone(i, S::GateB), b);
    }
    params.insert(ParamId::Standalone(i, S::Warmup), g.gate.warmup);
    if let Some(f) = g.ffn {
        params.insert(ParamId::Standalone(i, S::FfnNorm), f.norm);
        params.insert(ParamId::Standalone(i, S::FfnGate), f.ffn.w_gate);
        params.insert(ParamId::Standalone(i, S::FfnUp), f.ffn.w_up);
        params.insert(ParamId::Standalone(i, S::FfnDown), f.ffn.w_down);
        params.insert(ParamId::Standalone(i, S::FfnWarmup), f.warmup);
    }
}

/// Reverse pass of [`decoder_stack_forward`] for the upstream gradient of
/// the final-normed hidden states.
pub fn decoder_stack_backward(model: &Model, cache: &StackCache, grad_hidden: &Tensor) -> Result<ModelGrads> {
    if cache.fingerprint != model.fingerprint() {
        return Err(Error::StaleCache("model parameters changed since the forward pass".into()));
    }
    if grad_hidden.shape() != cache.pre_norm.shape() {
        return Err(Error::StaleCache(format!(
            "gradient shape {:?} does not match cached output {:?}",
            grad_hidden.shape(),
            cache.pre_norm.shape()
        )));
    }
    let cfg = &model.cfg;
    let ctx = LayerCtx::from_config(cfg)?;
    let mut params = BTreeMap::new();
    let (mut grad, dnorm) = rms_norm_backward(&cache.pre_norm, &model.final_norm, cfg.rms_eps, grad_hidden)?;
    params.insert(ParamId::FinalNorm, dnorm);
    let mut slow = Tensor::zeros(&cache.slow_shape);
    for step in cache.steps.iter().rev() {
        match step {
            Step::Layer(i, c) => {
                let host = &model.layers[*i];
                let g = match &model.branches[*i] {
                    Some(b) => hybrid_backward_with_ctx(&grad, c, host, b, &ctx)?,
                    None => standard_layer_backward(&grad, c, host, &ctx)?,
                };
                if let Some(ds) = &g.slow {
                    slow.add_assign(ds)?;
                }
                grad = g.input.clone();
                record_layer(&mut params, *i, g);
            }
            Step::Standalone(i, c) => {
                let s = model.standalone[*i]
                    .as_ref()
                    .ok_or_else(|| Error::StaleCache(format!("layer {i} has no stand-alone parameters")))?;
                let g = standalone_backward_with_ctx(&grad, c, s, &model.layers[*i].attn, &ctx)?;
                if let Some(ds) = &g.slow {
                    slow.add_assign(ds)?;
                }
                grad = g.input.clone();
                record_standalone(&mut params, *i, g);
            }
        }
    }
    // Stand-alone projections aliasing the following host layer: the shared
    // storage carries the sum of both uses.
    for (i, s) in model.standalone.iter().enumerate() {
        let Some(s) = s else { continue };
        for (w, p) in [
            (&s.wq, StandaloneParam::Wq),
            (&s.wk, StandaloneParam::Wk),
            (&s.wv, StandaloneParam::Wv),
            (&s.wo, StandaloneParam::Wo),
        ] {
            if let Weight::Shared(slot) = w {
                let host_id = ParamId::Host(i, host_slot_param(*slot));
                let mut total = params[&host_id].clone();
                total.add_assign(&params[&ParamId::Standalone(i, p)])?;
                params.insert(host_id, total.clone());
                params.insert(ParamId::Standalone(i, p), total);
            }
        }
    }
    Ok(ModelGrads {
        params,
        input: grad,
        slow,
    })
}
