//! Row-wise kernels (softmax, RMS normalization) and the SwiGLU feed-forward
//! block, each with its reverse-mode counterpart.

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Softmax over the last axis of a rank-2 tensor, max-subtracted.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, n) = x.expect_rank2("softmax_rows")?;
    let mut out = x.clone();
    if n == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_mut(n) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `x_i * w / sqrt(mean(x_i²) + eps)` for every row `x_i`.
pub fn rms_norm(x: &Tensor, weight: &Tensor, eps: f64) -> Result<Tensor> {
    let (_, d) = x.expect_rank2("rms_norm")?;
    if weight.len() != d {
        return Err(Error::shape("rms_norm", x.shape(), weight.shape()));
    }
    if eps <= 0.0 {
        return Err(Error::Usage(format!("rms_norm eps must be > 0, got {eps}")));
    }
    let mut out = x.clone();
    if d == 0 {
        return Ok(out);
    }
    let w = weight.data();
    for row in out.data_mut().chunks_mut(d) {
        let inv = inv_rms(row, eps);
        for (v, wj) in row.iter_mut().zip(w) {
            *v = *v * inv * wj;
        }
    }
    Ok(out)
}

fn inv_rms(row: &[f64], eps: f64) -> f64 {
    let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
    1.0 / (ms + eps).sqrt()
}

/// Gradients of [`rms_norm`] with respect to its input and weight.
pub fn rms_norm_backward(
    x: &Tensor,
    weight: &Tensor,
    eps: f64,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape("rms_norm_backward", x.shape(), grad_out.shape()));
    }
    let d = x.cols();
    let w = weight.data();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![0.0; d];
    for t in 0..x.rows() {
        let xr = x.row(t);
        let gr = grad_out.row(t);
        let inv = inv_rms(xr, eps);
        // Σ_k g_k w_k x_k
        let proj: f64 = (0..d).map(|k| gr[k] * w[k] * xr[k]).sum();
        let coef = inv * inv * inv * proj / d as f64;
        let dxr = dx.row_mut(t);
        for j in 0..d {
            dxr[j] = inv * w[j] * gr[j] - xr[j] * coef;
            dw[j] += gr[j] * xr[j] * inv;
        }
    }
    Ok((dx, Tensor::new(vec![d], dw)?))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Gated feed-forward block `(silu(x·W_gate) ∘ (x·W_up)) · W_down`.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w_gate: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    input: Tensor,
    gate_pre: Tensor,
    up: Tensor,
    act: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnGrads {
    pub w_gate: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

impl FfnParams {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            w_gate: Tensor::zeros(&[d, hidden]),
            w_up: Tensor::zeros(&[d, hidden]),
            w_down: Tensor::zeros(&[hidden, d]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, FfnCache)> {
        let gate_pre = matmul(x, &self.w_gate)?;
        let up = matmul(x, &self.w_up)?;
        let mut act = up.clone();
        for (a, g) in act.data_mut().iter_mut().zip(gate_pre.data()) {
            *a *= silu(*g);
        }
        let out = matmul(&act, &self.w_down)?;
        let cache = FfnCache {
            input: x.clone(),
            gate_pre,
            up,
            act,
        };
        Ok((out, cache))
    }

    /// Returns the input gradient and the parameter gradients.
    pub fn backward(&self, cache: &FfnCache, grad_out: &Tensor) -> Result<(Tensor, FfnGrads)> {
        let w_down = matmul_tn(&cache.act, grad_out)?;
        let d_act = matmul_nt(grad_out, &self.w_down)?;
        let mut d_gate = d_act.clone();
        let mut d_up = d_act;
        for i in 0..d_gate.len() {
            let g = cache.gate_pre.data()[i];
            let u = cache.up.data()[i];
            let da = d_gate.data()[i];
            d_gate.data_mut()[i] = da * u * silu_grad(g);
            d_up.data_mut()[i] = da * silu(g);
        }
        let w_gate = matmul_tn(&cache.input, &d_gate)?;
        let w_up = matmul_tn(&cache.input, &d_up)?;
        let mut dx = matmul_nt(&d_gate, &self.w_gate)?;
        dx.add_assign(&matmul_nt(&d_up, &self.w_up)?)?;
        Ok((
            dx,
            FfnGrads {
                w_gate,
                w_up,
                w_down,
            },
        ))
    }
}
