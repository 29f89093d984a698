//! Grouped-query multi-head attention.
//!
//! Query head `h` reads key/value head `h / (num_heads / num_kv_heads)`.
//! Scores are scaled by `1/sqrt(head_dim)`; the optional causal mask hides
//! key `j` from query `i` whenever `j > i`.

use crate::error::{Error, Result};
use crate::numerics::ops::softmax_in_place;
use crate::numerics::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `d × (num_heads·head_dim)`
    pub w_q: Tensor,
    /// `d × (num_kv_heads·head_dim)`
    pub w_k: Tensor,
    /// `d × (num_kv_heads·head_dim)`
    pub w_v: Tensor,
    /// `(num_heads·head_dim) × d`
    pub w_o: Tensor,
    pub num_heads: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
}

/// Head layout shared by every attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub num_heads: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
}

impl HeadLayout {
    pub fn new(num_heads: usize, num_kv_heads: usize, head_dim: usize) -> Result<Self> {
        if num_heads == 0 || num_kv_heads == 0 || head_dim == 0 {
            return Err(Error::Config("head counts and head_dim must be positive".into()));
        }
        if !num_heads.is_multiple_of(num_kv_heads) {
            return Err(Error::Config(format!(
                "num_heads {num_heads} is not a multiple of num_kv_heads {num_kv_heads}"
            )));
        }
        Ok(Self {
            num_heads,
            num_kv_heads,
            head_dim,
        })
    }

    pub fn q_width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn kv_width(&self) -> usize {
        self.num_kv_heads * self.head_dim
    }

    fn group(&self) -> usize {
        self.num_heads / self.num_kv_heads
    }
}

impl AttentionParams {
    pub fn layout(&self) -> Result<HeadLayout> {
        HeadLayout::new(self.num_heads, self.num_kv_heads, self.head_dim)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_q.rows()
    }

    /// Checks every projection against `d` and the head layout.
    pub fn validate(&self, d: usize) -> Result<HeadLayout> {
        let l = self.layout()?;
        let expect = [
            (&self.w_q, [d, l.q_width()]),
            (&self.w_k, [d, l.kv_width()]),
            (&self.w_v, [d, l.kv_width()]),
            (&self.w_o, [l.q_width(), d]),
        ];
        for (w, want) in expect {
            if w.shape() != want {
                return Err(Error::shape("attention params", w.shape(), &want));
            }
        }
        Ok(l)
    }

    pub fn fingerprint(&self) -> u64 {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
            .iter()
            .fold(0u64, |acc, t| acc.rotate_left(13) ^ t.fingerprint())
    }
}

/// Scaled dot-product attention over already projected q/k/v.
///
/// Returns the per-head context `[Tq × num_heads·head_dim]` and the attention
/// weights `[num_heads × Tq × Tk]`.
pub fn attend(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    layout: HeadLayout,
    causal: bool,
) -> Result<(Tensor, Tensor)> {
    let (tq, qw) = q.expect_rank2("attend q")?;
    let (tk, kw) = k.expect_rank2("attend k")?;
    if qw != layout.q_width() || kw != layout.kv_width() || v.shape() != k.shape() {
        return Err(Error::shape("attend", q.shape(), k.shape()));
    }
    if tk == 0 {
        return Err(Error::Usage("attention over an empty key set".into()));
    }
    let hd = layout.head_dim;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut probs = Tensor::zeros(&[layout.num_heads, tq, tk]);
    let mut ctx = Tensor::zeros(&[tq, qw]);
    let mut scores = vec![0.0; tk];
    for h in 0..layout.num_heads {
        let g = h / layout.group();
        for i in 0..tq {
            let qi = &q.row(i)[h * hd..(h + 1) * hd];
            let visible = if causal { (i + 1).min(tk) } else { tk };
            for (j, s) in scores.iter_mut().enumerate().take(visible) {
                let kj = &k.row(j)[g * hd..(g + 1) * hd];
                *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_in_place(&mut scores[..visible]);
            let prow = &mut probs.data_mut()[(h * tq + i) * tk..(h * tq + i + 1) * tk];
            prow[..visible].copy_from_slice(&scores[..visible]);
            let crow = &mut ctx.row_mut(i)[h * hd..(h + 1) * hd];
            for (j, &p) in scores.iter().enumerate().take(visible) {
                let vj = &v.row(j)[g * hd..(g + 1) * hd];
                for (c, vv) in crow.iter_mut().zip(vj) {
                    *c += p * vv;
                }
            }
        }
    }
    Ok((ctx, probs))
}

/// Gradients of [`attend`] with respect to `q`, `k`, `v`.
pub fn attend_backward(
    grad_ctx: &Tensor,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &Tensor,
    layout: HeadLayout,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (tq, tk) = (q.rows(), k.rows());
    if grad_ctx.shape() != q.shape() || probs.shape() != [layout.num_heads, tq, tk] {
        return Err(Error::shape("attend_backward", grad_ctx.shape(), q.shape()));
    }
    let hd = layout.head_dim;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = Tensor::zeros(q.shape());
    let mut dk = Tensor::zeros(k.shape());
    let mut dv = Tensor::zeros(v.shape());
    let mut dp = vec![0.0; tk];
    for h in 0..layout.num_heads {
        let g = h / layout.group();
        for i in 0..tq {
            let prow = &probs.data()[(h * tq + i) * tk..(h * tq + i + 1) * tk];
            let gi = &grad_ctx.row(i)[h * hd..(h + 1) * hd];
            for j in 0..tk {
                let vj = &v.row(j)[g * hd..(g + 1) * hd];
                dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                let dvj = &mut dv.row_mut(j)[g * hd..(g + 1) * hd];
                for (d, gg) in dvj.iter_mut().zip(gi) {
                    *d += prow[j] * gg;
                }
            }
            let inner: f64 = (0..tk).map(|j| dp[j] * prow[j]).sum();
            let qi: Vec<f64> = q.row(i)[h * hd..(h + 1) * hd].to_vec();
            for j in 0..tk {
                let ds = prow[j] * (dp[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj: Vec<f64> = k.row(j)[g * hd..(g + 1) * hd].to_vec();
                let dqi = &mut dq.row_mut(i)[h * hd..(h + 1) * hd];
                for (d, kk) in dqi.iter_mut().zip(&kj) {
                    *d += ds * kk;
                }
                let dkj = &mut dk.row_mut(j)[g * hd..(g + 1) * hd];
                for (d, qq) in dkj.iter_mut().zip(&qi) {
                    *d += ds * qq;
                }
            }
        }
    }
    Ok((dq, dk, dv))
}

/// Everything [`mha_backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct MhaCache {
    q_input: Tensor,
    kv_input: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    ctx: Tensor,
    probs: Tensor,
    params_fingerprint: u64,
}

#[derive(Debug, Clone)]
pub struct MhaOutput {
    pub output: Tensor,
    pub weights: Tensor,
    pub cache: MhaCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhaGrads {
    pub q_input: Tensor,
    pub kv_input: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

/// Projected multi-head attention without positional transforms.
pub fn mha_forward(
    q_input: &Tensor,
    kv_input: &Tensor,
    params: &AttentionParams,
    causal: bool,
) -> Result<MhaOutput> {
    let (tq, d) = q_input.expect_rank2("mha_forward")?;
    let (_, dk) = kv_input.expect_rank2("mha_forward")?;
    if dk != d {
        return Err(Error::shape("mha_forward", q_input.shape(), kv_input.shape()));
    }
    if tq == 0 {
        return Err(Error::Usage("mha_forward needs at least one query".into()));
    }
    let layout = params.validate(d)?;
    let q = matmul(q_input, &params.w_q)?;
    let k = matmul(kv_input, &params.w_k)?;
    let v = matmul(kv_input, &params.w_v)?;
    let (ctx, probs) = attend(&q, &k, &v, layout, causal)?;
    let output = matmul(&ctx, &params.w_o)?;
    Ok(MhaOutput {
        output,
        weights: probs.clone(),
        cache: MhaCache {
            q_input: q_input.clone(),
            kv_input: kv_input.clone(),
            q,
            k,
            v,
            ctx,
            probs,
            params_fingerprint: params.fingerprint(),
        },
    })
}

/// Reverse-mode gradients of [`mha_forward`].
///
/// Fails with [`Error::StaleCache`] when `params` differ from the ones the
/// cache was built with, or when `grad_output` does not match the output.
pub fn mha_backward(
    grad_output: &Tensor,
    cache: Option<&MhaCache>,
    params: &AttentionParams,
) -> Result<MhaGrads> {
    let cache = cache.ok_or_else(|| Error::StaleCache("no forward cache supplied".into()))?;
    if cache.params_fingerprint != params.fingerprint() {
        return Err(Error::StaleCache(
            "attention parameters changed since the forward pass".into(),
        ));
    }
    if grad_output.shape() != cache.q_input.shape() {
        return Err(Error::StaleCache(format!(
            "gradient shape {:?} does not match cached output {:?}",
            grad_output.shape(),
            cache.q_input.shape()
        )));
    }
    let layout = params.layout()?;
    let w_o = matmul_tn(&cache.ctx, grad_output)?;
    let d_ctx = matmul_nt(grad_output, &params.w_o)?;
    let (dq, dk, dv) = attend_backward(&d_ctx, &cache.q, &cache.k, &cache.v, &cache.probs, layout)?;
    let w_q = matmul_tn(&cache.q_input, &dq)?;
    let w_k = matmul_tn(&cache.kv_input, &dk)?;
    let w_v = matmul_tn(&cache.kv_input, &dv)?;
    let q_input = matmul_nt(&dq, &params.w_q)?;
    let mut kv_input = matmul_nt(&dk, &params.w_k)?;
    kv_input.add_assign(&matmul_nt(&dv, &params.w_v)?)?;
    Ok(MhaGrads {
        q_input,
        kv_input,
        w_q,
        w_k,
        w_v,
        w_o,
    })
}
