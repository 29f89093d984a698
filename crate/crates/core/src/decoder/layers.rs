//! Forward and backward passes of the three layer kinds: the standard
//! pre-norm decoder layer, the hybrid layer (self-attention with a parallel
//! gated cross-attention branch over slow tokens) and the stand-alone
//! cross-attention layer.

use crate::config::{GateMode, ModelConfig};
use crate::decoder::layout::HiddenState;
use crate::decoder::params::{
    CrossBranch, DecoderLayerParams, GateParams, HybridLayerParams, StandaloneLayer,
};
use crate::error::{Error, Result};
use crate::numerics::{
    attend, attend_backward, matmul, matmul_nt, matmul_tn, rms_norm, rms_norm_backward,
    AttentionParams, FfnCache, FfnGrads, HeadLayout, Rope, Tensor,
};

/// Gate values for the queried rows.
///
/// Static: the warm-up scalar as a `[1]` tensor. Dynamic: `tanh(x·w + b)`
/// with shape `n × 1` (token) or `n × d` (channel), before the warm-up product.
pub fn gate_values(text_hidden: &Tensor, gate: &GateParams) -> Result<Tensor> {
    match gate.mode {
        GateMode::Static => Ok(gate.warmup.clone()),
        GateMode::TokenDynamic | GateMode::ChannelDynamic => {
            let w = gate.w.as_ref().ok_or_else(|| Error::Config("dynamic gate without weights".into()))?;
            let b = gate.b.as_ref().ok_or_else(|| Error::Config("dynamic gate without bias".into()))?;
            let mut z = matmul(text_hidden, w)?;
            let width = z.cols();
            for row in z.data_mut().chunks_mut(width) {
                for (v, bb) in row.iter_mut().zip(b.data()) {
                    *v = (*v + bb).tanh();
                }
            }
            Ok(z)
        }
    }
}

/// Scale `x_prime` by the gate: `x' ∘ g_d · g_s`, or `x' · g_s` for the static gate.
fn gate_apply(x_prime: &Tensor, g: &Tensor, gate: &GateParams) -> Tensor {
    let gs = gate.warmup();
    let mut out = x_prime.clone();
    match gate.mode {
        GateMode::Static => {
            out.data_mut().iter_mut().for_each(|v| *v *= gs);
        }
        GateMode::TokenDynamic => {
            for r in 0..out.rows() {
                let f = g.at(r, 0) * gs;
                out.row_mut(r).iter_mut().for_each(|v| *v *= f);
            }
        }
        GateMode::ChannelDynamic => {
            for (v, gg) in out.data_mut().iter_mut().zip(g.data()) {
                *v *= gg * gs;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateGrads {
    pub w: Option<Tensor>,
    pub b: Option<Tensor>,
    pub warmup: Tensor,
}

/// Returns `(d x_prime, d gate_input, gate grads)`.
fn gate_backward(
    dm: &Tensor,
    x_prime: &Tensor,
    gate_in: &Tensor,
    g: &Tensor,
    gate: &GateParams,
) -> Result<(Tensor, Option<Tensor>, GateGrads)> {
    let gs = gate.warmup();
    let dx_prime = gate_apply(dm, g, gate);
    match gate.mode {
        GateMode::Static => {
            let dgs = dm.dot(x_prime);
            Ok((
                dx_prime,
                None,
                GateGrads {
                    w: None,
                    b: None,
                    warmup: Tensor::scalar(dgs),
                },
            ))
        }
        GateMode::TokenDynamic | GateMode::ChannelDynamic => {
            let n = dm.rows();
            let width = g.cols();
            // d(loss)/d(g_d) before the warm-up product
            let mut dfactor = Tensor::zeros(&[n, width]);
            for r in 0..n {
                if width == 1 {
                    dfactor.data_mut()[r] = dm.row(r).iter().zip(x_prime.row(r)).map(|(a, b)| a * b).sum();
                } else {
                    for c in 0..width {
                        dfactor.data_mut()[r * width + c] = dm.at(r, c) * x_prime.at(r, c);
                    }
                }
            }
            let dgs = dfactor.dot(g);
            let mut dz = dfactor;
            for (v, gg) in dz.data_mut().iter_mut().zip(g.data()) {
                *v *= gs * (1.0 - gg * gg);
            }
            let w = gate.w.as_ref().expect("dynamic gate weights");
            let dw = matmul_tn(gate_in, &dz)?;
            let mut db = vec![0.0; width];
            for row in dz.data().chunks(width) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            let dgate_in = matmul_nt(&dz, w)?;
            Ok((
                dx_prime,
                Some(dgate_in),
                GateGrads {
                    w: Some(dw),
                    b: Some(Tensor::new(vec![width], db)?),
                    warmup: Tensor::scalar(dgs),
                },
            ))
        }
    }
}

/// Multi-head cross-attention of (already projected, already rotated) text
/// queries over projected slow tokens, mapped back through `host_attn.w_o`.
///
/// Returns `(X', weights[heads × n × m])`.
pub fn cross_attention(
    q_text: &Tensor,
    slow_normed: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    host_attn: &AttentionParams,
) -> Result<(Tensor, Tensor)> {
    let c = cross_forward(q_text, slow_normed, wk, wv, host_attn)?;
    Ok((c.x_prime, c.probs))
}

#[derive(Debug, Clone)]
struct CrossCore {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    ctx: Tensor,
    probs: Tensor,
    x_prime: Tensor,
}

fn cross_forward(
    q: &Tensor,
    slow_normed: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    attn: &AttentionParams,
) -> Result<CrossCore> {
    if slow_normed.rows() == 0 {
        return Err(Error::Usage("cross-attention needs at least one slow token".into()));
    }
    let layout = attn.layout()?;
    let k = matmul(slow_normed, wk)?;
    let v = matmul(slow_normed, wv)?;
    let (ctx, probs) = attend(q, &k, &v, layout, false)?;
    let x_prime = matmul(&ctx, &attn.w_o)?;
    Ok(CrossCore {
        q: q.clone(),
        k,
        v,
        ctx,
        probs,
        x_prime,
    })
}

struct CrossCoreGrads {
    q: Tensor,
    slow_normed: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
}

fn cross_backward(
    dx_prime: &Tensor,
    c: &CrossCore,
    slow_normed: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    wo: &Tensor,
    layout: HeadLayout,
) -> Result<CrossCoreGrads> {
    let dwo = matmul_tn(&c.ctx, dx_prime)?;
    let dctx = matmul_nt(dx_prime, wo)?;
    let (dq, dk, dv) = attend_backward(&dctx, &c.q, &c.k, &c.v, &c.probs, layout)?;
    let dwk = matmul_tn(slow_normed, &dk)?;
    let dwv = matmul_tn(slow_normed, &dv)?;
    let mut dsn = matmul_nt(&dk, wk)?;
    dsn.add_assign(&matmul_nt(&dv, wv)?)?;
    Ok(CrossCoreGrads {
        q: dq,
        slow_normed: dsn,
        wk: dwk,
        wv: dwv,
        wo: dwo,
    })
}

/// Per-layer numerical settings derived from the model config.
#[derive(Debug, Clone, Copy)]
pub struct LayerCtx {
    pub rope: Rope,
    pub eps: f64,
}

impl LayerCtx {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            rope: Rope::new(cfg.head_dim, cfg.rope_theta)?,
            eps: cfg.rms_eps,
        })
    }
}

fn positions(t: usize) -> Vec<usize> {
    (0..t).collect()
}

#[derive(Debug, Clone)]
struct CrossBranchCache {
    rows: Vec<usize>,
    slow: Tensor,
    slow_normed: Tensor,
    gate_in: Tensor,
    core: CrossCore,
    g: Tensor,
}

/// Forward state of a standard or hybrid layer.
#[derive(Debug, Clone)]
pub struct LayerCache {
    x: Tensor,
    xn: Tensor,
    q_rot: Tensor,
    k_rot: Tensor,
    v: Tensor,
    ctx: Tensor,
    probs: Tensor,
    after_self_attn: Tensor,
    after_merge: Tensor,
    ffn: FfnCache,
    cross: Option<CrossBranchCache>,
    fingerprint: u64,
}

impl LayerCache {
    /// Residual stream after the self-attention add, before the cross merge.
    pub fn after_self_attn(&self) -> &Tensor {
        &self.after_self_attn
    }

    /// Residual stream after the cross merge, before the FFN sublayer.
    pub fn after_merge(&self) -> &Tensor {
        &self.after_merge
    }

    /// Self-attention weights `[heads × T × T]`.
    pub fn self_attention_weights(&self) -> &Tensor {
        &self.probs
    }

    /// Cross-attention weights `[heads × n_q × m]`, if the branch ran.
    pub fn cross_attention_weights(&self) -> Option<&Tensor> {
        self.cross.as_ref().map(|c| &c.core.probs)
    }

    /// Raw gate values of the queried rows, if the branch ran.
    pub fn gate_values(&self) -> Option<&Tensor> {
        self.cross.as_ref().map(|c| &c.g)
    }

    pub fn query_rows(&self) -> &[usize] {
        self.cross.as_ref().map_or(&[], |c| &c.rows)
    }
}

fn host_fingerprint(host: &DecoderLayerParams, branch: Option<(&Tensor, &Tensor, &GateParams)>) -> u64 {
    let mut acc = host.attn.fingerprint()
        ^ host.input_norm.fingerprint().rotate_left(1)
        ^ host.post_norm.fingerprint().rotate_left(2)
        ^ host.ffn.w_gate.fingerprint().rotate_left(3)
        ^ host.ffn.w_up.fingerprint().rotate_left(4)
        ^ host.ffn.w_down.fingerprint().rotate_left(5);
    if let Some((wk, wv, gate)) = branch {
        acc ^= wk.fingerprint().rotate_left(6) ^ wv.fingerprint().rotate_left(7) ^ gate_fingerprint(gate);
    }
    acc
}

fn gate_fingerprint(gate: &GateParams) -> u64 {
    let mut acc = gate.warmup.fingerprint().rotate_left(8);
    if let Some(w) = &gate.w {
        acc ^= w.fingerprint().rotate_left(9);
    }
    if let Some(b) = &gate.b {
        acc ^= b.fingerprint().rotate_left(10);
    }
    acc
}

fn layer_forward(
    h: &HiddenState,
    host: &DecoderLayerParams,
    branch: Option<(&CrossBranch, &Tensor, &[usize])>,
    ctx: &LayerCtx,
) -> Result<(HiddenState, LayerCache)> {
    let x = &h.x;
    let (t, d) = x.expect_rank2("decoder layer")?;
    let layout = host.attn.validate(d)?;
    let pos = positions(t);
    let xn = rms_norm(x, &host.input_norm, ctx.eps)?;
    let q = matmul(&xn, &host.attn.w_q)?;
    let k = matmul(&xn, &host.attn.w_k)?;
    let v = matmul(&xn, &host.attn.w_v)?;
    let q_rot = ctx.rope.apply(&q, &pos)?;
    let k_rot = ctx.rope.apply(&k, &pos)?;
    let (attn_ctx, probs) = attend(&q_rot, &k_rot, &v, layout, true)?;
    let a = matmul(&attn_ctx, &host.attn.w_o)?;
    let after_self_attn = x.add(&a)?;
    let mut after_merge = after_self_attn.clone();

    let mut cross = None;
    let mut branch_fp = None;
    if let Some((br, slow, rows)) = branch {
        let wk = br.wk.resolve(&host.attn);
        let wv = br.wv.resolve(&host.attn);
        branch_fp = Some((wk, wv, &br.gate));
        if !rows.is_empty() {
            if slow.rank() != 2 || slow.cols() != d {
                return Err(Error::shape("hybrid layer slow tokens", slow.shape(), &[0, d]));
            }
            let slow_normed = rms_norm(slow, &host.input_norm, ctx.eps)?;
            let qc = q_rot.gather_rows(rows);
            let core = cross_forward(&qc, &slow_normed, wk, wv, &host.attn)?;
            let gate_in = xn.gather_rows(rows);
            let g = gate_values(&gate_in, &br.gate)?;
            let merge = gate_apply(&core.x_prime, &g, &br.gate);
            after_merge.scatter_add_rows(rows, &merge);
            cross = Some(CrossBranchCache {
                rows: rows.to_vec(),
                slow: slow.clone(),
                slow_normed,
                gate_in,
                core,
                g,
            });
        }
    }

    let hn = rms_norm(&after_merge, &host.post_norm, ctx.eps)?;
    let (f, ffn_cache) = host.ffn.forward(&hn)?;
    let out = after_merge.add(&f)?;
    let cache = LayerCache {
        x: x.clone(),
        xn,
        q_rot,
        k_rot,
        v,
        ctx: attn_ctx,
        probs,
        after_self_attn,
        after_merge,
        ffn: ffn_cache,
        cross,
        fingerprint: host_fingerprint(host, branch_fp),
    };
    Ok((h.with_x(out), cache))
}

/// Pre-norm causal self-attention and FFN, both with residuals.
pub fn standard_layer_forward(
    h: &HiddenState,
    host: &DecoderLayerParams,
    ctx: &LayerCtx,
) -> Result<(HiddenState, LayerCache)> {
    layer_forward(h, host, None, ctx)
}

/// Host layer plus the gated cross-attention branch.
///
/// Hidden states and slow tokens share the host input norm. Queried rows
/// (per `cfg.query_mode`) reuse the rotated self-attention queries; slow keys
/// get no positional transform. The gated output is added to the queried
/// rows only, alongside the self-attention residual, before the FFN.
pub fn hybrid_layer_forward(
    h: &HiddenState,
    slow: &Tensor,
    p: HybridLayerParams<'_>,
    cfg: &ModelConfig,
) -> Result<(HiddenState, LayerCache)> {
    let ctx = LayerCtx::from_config(cfg)?;
    let rows = h.layout.query_rows(cfg.query_mode);
    layer_forward(h, p.host, Some((p.branch, slow, &rows)), &ctx)
}

pub(crate) fn hybrid_forward_with_ctx(
    h: &HiddenState,
    slow: &Tensor,
    host: &DecoderLayerParams,
    branch: &CrossBranch,
    rows: &[usize],
    ctx: &LayerCtx,
) -> Result<(HiddenState, LayerCache)> {
    layer_forward(h, host, Some((branch, slow, rows)), ctx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostGrads {
    pub input_norm: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub post_norm: Tensor,
    pub ffn: FfnGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrads {
    pub wk: Tensor,
    pub wv: Tensor,
    pub gate: GateGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub input: Tensor,
    /// Present when the cross branch ran.
    pub slow: Option<Tensor>,
    pub host: HostGrads,
    pub branch: Option<BranchGrads>,
}

fn layer_backward(
    grad: &Tensor,
    cache: &LayerCache,
    host: &DecoderLayerParams,
    branch: Option<&CrossBranch>,
    ctx: &LayerCtx,
) -> Result<LayerGrads> {
    let fp = host_fingerprint(
        host,
        branch.map(|b| (b.wk.resolve(&host.attn), b.wv.resolve(&host.attn), &b.gate)),
    );
    if fp != cache.fingerprint {
        return Err(Error::StaleCache("layer parameters changed since the forward pass".into()));
    }
    if grad.shape() != cache.x.shape() {
        return Err(Error::StaleCache(format!(
            "gradient shape {:?} does not match cached layer output {:?}",
            grad.shape(),
            cache.x.shape()
        )));
    }
    if cache.cross.is_some() && branch.is_none() {
        return Err(Error::StaleCache("cache has a cross branch but none was supplied".into()));
    }
    let layout = host.attn.layout()?;
    let t = cache.x.rows();
    let pos = positions(t);

    // FFN sublayer
    let (dhn, ffn) = host.ffn.backward(&cache.ffn, grad)?;
    let (dh_ffn, post_norm) = rms_norm_backward(&cache.after_merge, &host.post_norm, ctx.eps, &dhn)?;
    let mut dh = grad.clone();
    dh.add_assign(&dh_ffn)?;

    let mut dxn = Tensor::zeros(cache.xn.shape());
    let mut dq_rot = Tensor::zeros(cache.q_rot.shape());
    let mut dwo = Tensor::zeros(host.attn.w_o.shape());
    let mut input_norm = Tensor::zeros(host.input_norm.shape());
    let mut slow_grad = None;
    let mut branch_grads = None;

    if let (Some(c), Some(br)) = (&cache.cross, branch) {
        let dm = dh.gather_rows(&c.rows);
        let (dx_prime, dgate_in, gate) = gate_backward(&dm, &c.core.x_prime, &c.gate_in, &c.g, &br.gate)?;
        let wk = br.wk.resolve(&host.attn);
        let wv = br.wv.resolve(&host.attn);
        let cg = cross_backward(&dx_prime, &c.core, &c.slow_normed, wk, wv, &host.attn.w_o, layout)?;
        dwo.add_assign(&cg.wo)?;
        dq_rot.scatter_add_rows(&c.rows, &cg.q);
        if let Some(dg) = dgate_in {
            dxn.scatter_add_rows(&c.rows, &dg);
        }
        let (ds, dnorm) = rms_norm_backward(&c.slow, &host.input_norm, ctx.eps, &cg.slow_normed)?;
        input_norm.add_assign(&dnorm)?;
        slow_grad = Some(ds);
        branch_grads = Some(BranchGrads {
            wk: cg.wk,
            wv: cg.wv,
            gate,
        });
    }

    // self-attention sublayer; `dh` flows unchanged through both residuals
    dwo.add_assign(&matmul_tn(&cache.ctx, &dh)?)?;
    let dctx = matmul_nt(&dh, &host.attn.w_o)?;
    let (dq_self, dk_rot, dv) = attend_backward(&dctx, &cache.q_rot, &cache.k_rot, &cache.v, &cache.probs, layout)?;
    dq_rot.add_assign(&dq_self)?;
    let dq = ctx.rope.apply_inverse(&dq_rot, &pos)?;
    let dk = ctx.rope.apply_inverse(&dk_rot, &pos)?;
    let w_q = matmul_tn(&cache.xn, &dq)?;
    let mut w_k = matmul_tn(&cache.xn, &dk)?;
    let mut w_v = matmul_tn(&cache.xn, &dv)?;
    dxn.add_assign(&matmul_nt(&dq, &host.attn.w_q)?)?;
    dxn.add_assign(&matmul_nt(&dk, &host.attn.w_k)?)?;
    dxn.add_assign(&matmul_nt(&dv, &host.attn.w_v)?)?;
    let (dx_norm, dnorm) = rms_norm_backward(&cache.x, &host.input_norm, ctx.eps, &dxn)?;
    input_norm.add_assign(&dnorm)?;
    let mut input = dh;
    input.add_assign(&dx_norm)?;

    // SHARE: one storage, so both paths report the combined gradient.
    if let (Some(bg), Some(br)) = (branch_grads.as_mut(), branch) {
        if br.wk.is_shared() {
            w_k.add_assign(&bg.wk)?;
            bg.wk = w_k.clone();
        }
        if br.wv.is_shared() {
            w_v.add_assign(&bg.wv)?;
            bg.wv = w_v.clone();
        }
    } else if let Some(br) = branch {
        // branch idle this pass (no queried rows): its parameters get zero
        branch_grads = Some(BranchGrads {
            wk: if br.wk.is_shared() { w_k.clone() } else { Tensor::zeros(br.wk.resolve(&host.attn).shape()) },
            wv: if br.wv.is_shared() { w_v.clone() } else { Tensor::zeros(br.wv.resolve(&host.attn).shape()) },
            gate: zero_gate_grads(&br.gate),
        });
    }

    Ok(LayerGrads {
        input,
        slow: slow_grad,
        host: HostGrads {
            input_norm,
            w_q,
            w_k,
            w_v,
            w_o: dwo,
            post_norm,
            ffn,
        },
        branch: branch_grads,
    })
}

fn zero_gate_grads(gate: &GateParams) -> GateGrads {
    GateGrads {
        w: gate.w.as_ref().map(|w| Tensor::zeros(w.shape())),
        b: gate.b.as_ref().map(|b| Tensor::zeros(b.shape())),
        warmup: Tensor::scalar(0.0),
    }
}

pub fn standard_layer_backward(
    grad: &Tensor,
    cache: &LayerCache,
    host: &DecoderLayerParams,
    ctx: &LayerCtx,
) -> Result<LayerGrads> {
    layer_backward(grad, cache, host, None, ctx)
}

/// Reverse-mode gradients of [`hybrid_layer_forward`].
///
/// Under SHARE the key/value gradients include the self-attention path, so
/// `branch.wk == host.w_k` in the result.
pub fn hybrid_layer_backward(
    grad: &Tensor,
    cache: &LayerCache,
    p: HybridLayerParams<'_>,
    cfg: &ModelConfig,
) -> Result<LayerGrads> {
    let ctx = LayerCtx::from_config(cfg)?;
    layer_backward(grad, cache, p.host, Some(p.branch), &ctx)
}

pub(crate) fn hybrid_backward_with_ctx(
    grad: &Tensor,
    cache: &LayerCache,
    host: &DecoderLayerParams,
    branch: &CrossBranch,
    ctx: &LayerCtx,
) -> Result<LayerGrads> {
    layer_backward(grad, cache, host, Some(branch), ctx)
}

/// Forward state of a stand-alone cross-attention layer.
#[derive(Debug, Clone)]
pub struct StandaloneCache {
    x: Tensor,
    xn: Tensor,
    cross: Option<CrossBranchCache>,
    after_merge: Tensor,
    ffn: Option<(FfnCache, Tensor)>,
    fingerprint: u64,
}

impl StandaloneCache {
    /// Hidden states entering the layer.
    pub fn input(&self) -> &Tensor {
        &self.x
    }

    pub fn after_merge(&self) -> &Tensor {
        &self.after_merge
    }

    pub fn cross_attention_weights(&self) -> Option<&Tensor> {
        self.cross.as_ref().map(|c| &c.core.probs)
    }

    pub fn gate_values(&self) -> Option<&Tensor> {
        self.cross.as_ref().map(|c| &c.g)
    }

    pub fn query_rows(&self) -> &[usize] {
        self.cross.as_ref().map_or(&[], |c| &c.rows)
    }
}

fn standalone_fingerprint(layer: &StandaloneLayer, neighbor: &AttentionParams) -> u64 {
    let mut acc = layer.norm.fingerprint()
        ^ layer.wq.resolve(neighbor).fingerprint().rotate_left(1)
        ^ layer.wk.resolve(neighbor).fingerprint().rotate_left(2)
        ^ layer.wv.resolve(neighbor).fingerprint().rotate_left(3)
        ^ layer.wo.resolve(neighbor).fingerprint().rotate_left(4)
        ^ gate_fingerprint(&layer.gate);
    if let Some(f) = &layer.ffn {
        acc ^= f.norm.fingerprint().rotate_left(11)
            ^ f.ffn.w_gate.fingerprint().rotate_left(12)
            ^ f.ffn.w_up.fingerprint().rotate_left(13)
            ^ f.ffn.w_down.fingerprint().rotate_left(14)
            ^ f.warmup.fingerprint().rotate_left(15);
    }
    acc
}

/// A dedicated cross-attention layer: norm, cross-attention with its own
/// query projection, gated residual, then an optional FFN block whose
/// residual is gated by its own warm-up scalar.
///
/// `neighbor` is the self-attention of the host layer that follows; shared
/// projections resolve against it.
pub fn standalone_xattn_layer_forward(
    h: &HiddenState,
    slow: &Tensor,
    layer: &StandaloneLayer,
    neighbor: &AttentionParams,
    cfg: &ModelConfig,
) -> Result<(HiddenState, StandaloneCache)> {
    let ctx = LayerCtx::from_config(cfg)?;
    let rows = h.layout.query_rows(cfg.query_mode);
    standalone_forward_with_ctx(h, slow, layer, neighbor, &rows, &ctx)
}

pub(crate) fn standalone_forward_with_ctx(
    h: &HiddenState,
    slow: &Tensor,
    layer: &StandaloneLayer,
    neighbor: &AttentionParams,
    rows: &[usize],
    ctx: &LayerCtx,
) -> Result<(HiddenState, StandaloneCache)> {
    let x = &h.x;
    let (_, d) = x.expect_rank2("standalone layer")?;
    neighbor.validate(d)?;
    let xn = rms_norm(x, &layer.norm, ctx.eps)?;
    let mut after_merge = x.clone();
    let mut cross = None;
    if !rows.is_empty() {
        if slow.rank() != 2 || slow.cols() != d {
            return Err(Error::shape("standalone layer slow tokens", slow.shape(), &[0, d]));
        }
        let gate_in = xn.gather_rows(rows);
        let q = matmul(&gate_in, layer.wq.resolve(neighbor))?;
        let q_rot = ctx.rope.apply(&q, rows)?;
        let slow_normed = rms_norm(slow, &layer.norm, ctx.eps)?;
        let wo_attn = AttentionParams {
            w_o: layer.wo.resolve(neighbor).clone(),
            ..neighbor.clone()
        };
        let core = cross_forward(
            &q_rot,
            &slow_normed,
            layer.wk.resolve(neighbor),
            layer.wv.resolve(neighbor),
            &wo_attn,
        )?;
        let g = gate_values(&gate_in, &layer.gate)?;
        let merge = gate_apply(&core.x_prime, &g, &layer.gate);
        after_merge.scatter_add_rows(rows, &merge);
        cross = Some(CrossBranchCache {
            rows: rows.to_vec(),
            slow: slow.clone(),
            slow_normed,
            gate_in,
            core,
            g,
        });
    }
    let mut out = after_merge.clone();
    let mut ffn_cache = None;
    if let Some(f) = &layer.ffn {
        let hn = rms_norm(&after_merge, &f.norm, ctx.eps)?;
        let (y, fc) = f.ffn.forward(&hn)?;
        let gs = f.warmup.data()[0];
        for (o, v) in out.data_mut().iter_mut().zip(y.data()) {
            *o += v * gs;
        }
        ffn_cache = Some((fc, y));
    }
    Ok((
        h.with_x(out),
        StandaloneCache {
            x: x.clone(),
            xn,
            cross,
            after_merge,
            ffn: ffn_cache,
            fingerprint: standalone_fingerprint(layer, neighbor),
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandaloneFfnGrads {
    pub norm: Tensor,
    pub ffn: FfnGrads,
    pub warmup: Tensor,
}

/// Gradients of a stand-alone layer. Projection gradients cover this
/// layer's use only; the stack adds them to the neighbor when shared.
#[derive(Debug, Clone, PartialEq)]
pub struct StandaloneGrads {
    pub input: Tensor,
    pub slow: Option<Tensor>,
    pub norm: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub gate: GateGrads,
    pub ffn: Option<StandaloneFfnGrads>,
}

pub fn standalone_xattn_layer_backward(
    grad: &Tensor,
    cache: &StandaloneCache,
    layer: &StandaloneLayer,
    neighbor: &AttentionParams,
    cfg: &ModelConfig,
) -> Result<StandaloneGrads> {
    let ctx = LayerCtx::from_config(cfg)?;
    standalone_backward_with_ctx(grad, cache, layer, neighbor, &ctx)
}

pub(crate) fn standalone_backward_with_ctx(
    grad: &Tensor,
    cache: &StandaloneCache,
    layer: &StandaloneLayer,
    neighbor: &AttentionParams,
    ctx: &LayerCtx,
) -> Result<StandaloneGrads> {
    if standalone_fingerprint(layer, neighbor) != cache.fingerprint {
        return Err(Error::StaleCache("stand-alone layer parameters changed since the forward pass".into()));
    }
    if grad.shape() != cache.x.shape() {
        return Err(Error::StaleCache("gradient shape does not match cached output".into()));
    }
    let layout = neighbor.layout()?;
    let mut dh = grad.clone();
    let mut ffn_grads = None;
    if let (Some(f), Some((fc, y))) = (&layer.ffn, &cache.ffn) {
        let gs = f.warmup.data()[0];
        let dwarm = grad.dot(y);
        let dy = grad.scale(gs);
        let (dhn, fg) = f.ffn.backward(fc, &dy)?;
        let (dmerge, dnorm) = rms_norm_backward(&cache.after_merge, &f.norm, ctx.eps, &dhn)?;
        dh.add_assign(&dmerge)?;
        ffn_grads = Some(StandaloneFfnGrads {
            norm: dnorm,
            ffn: fg,
            warmup: Tensor::scalar(dwarm),
        });
    }
    let wq = layer.wq.resolve(neighbor);
    let wk = layer.wk.resolve(neighbor);
    let wv = layer.wv.resolve(neighbor);
    let wo = layer.wo.resolve(neighbor);
    let mut norm = Tensor::zeros(layer.norm.shape());
    let mut grads = StandaloneGrads {
        input: dh.clone(),
        slow: None,
        norm: Tensor::zeros(layer.norm.shape()),
        wq: Tensor::zeros(wq.shape()),
        wk: Tensor::zeros(wk.shape()),
        wv: Tensor::zeros(wv.shape()),
        wo: Tensor::zeros(wo.shape()),
        gate: zero_gate_grads(&layer.gate),
        ffn: ffn_grads,
    };
    if let Some(c) = &cache.cross {
        let dm = dh.gather_rows(&c.rows);
        let (dx_prime, dgate_in, gate) = gate_backward(&dm, &c.core.x_prime, &c.gate_in, &c.g, &layer.gate)?;
        let cg = cross_backward(&dx_prime, &c.core, &c.slow_normed, wk, wv, wo, layout)?;
        let dq = ctx.rope.apply_inverse(&cg.q, &c.rows)?;
        grads.wq = matmul_tn(&c.gate_in, &dq)?;
        let mut dgi = matmul_nt(&dq, wq)?;
        if let Some(dg) = dgate_in {
            dgi.add_assign(&dg)?;
        }
        let mut dxn = Tensor::zeros(cache.xn.shape());
        dxn.scatter_add_rows(&c.rows, &dgi);
        let (dx, dn) = rms_norm_backward(&cache.x, &layer.norm, ctx.eps, &dxn)?;
        norm.add_assign(&dn)?;
        grads.input.add_assign(&dx)?;
        let (ds, dn) = rms_norm_backward(&c.slow, &layer.norm, ctx.eps, &cg.slow_normed)?;
        norm.add_assign(&dn)?;
        grads.slow = Some(ds);
        grads.wk = cg.wk;
        grads.wv = cg.wv;
        grads.wo = cg.wo;
        grads.gate = gate;
    }
    grads.norm = norm;
    Ok(grads)
}
