//! Straight-line scalar reimplementations used as oracles.
//!
//! Nothing here calls into the library's kernels: matrices are `Vec<Vec<f64>>`
//! and every loop is spelled out.

#![allow(dead_code)]

use slowfast_core::config::{GateMode, ModelConfig, QueryMode};
use slowfast_core::decoder::{Model, Segment, SequenceLayout};
use slowfast_core::Tensor;

pub type M = Vec<Vec<f64>>;

pub fn to_m(t: &Tensor) -> M {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn from_m(m: &M, cols: usize) -> Tensor {
    let data: Vec<f64> = m.iter().flatten().copied().collect();
    Tensor::new(vec![m.len(), cols], data).unwrap()
}

pub fn vec_of(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

pub fn mm(a: &M, b: &M) -> M {
    let n = b.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; n]; a.len()];
    for i in 0..a.len() {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..b.len() {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn rms(x: &M, w: &[f64], eps: f64) -> M {
    x.iter()
        .map(|row| {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let r = (ms + eps).sqrt();
            row.iter().zip(w).map(|(v, g)| v / r * g).collect()
        })
        .collect()
}

pub fn rope(x: &M, pos: &[usize], hd: usize, theta: f64) -> M {
    let half = hd / 2;
    let mut out = x.clone();
    for (r, row) in out.iter_mut().enumerate() {
        let heads = row.len() / hd;
        for h in 0..heads {
            for j in 0..half {
                let freq = 1.0 / theta.powf((2 * j) as f64 / hd as f64);
                let ang = pos[r] as f64 * freq;
                let a = x[r][h * hd + j];
                let b = x[r][h * hd + j + half];
                row[h * hd + j] = a * ang.cos() - b * ang.sin();
                row[h * hd + j + half] = b * ang.cos() + a * ang.sin();
            }
        }
    }
    out
}

/// Grouped-query attention; causal masking compares row and key indices.
pub fn attention(q: &M, k: &M, v: &M, heads: usize, kv_heads: usize, hd: usize, causal: bool) -> M {
    let group = heads / kv_heads;
    let mut out = vec![vec![0.0; heads * hd]; q.len()];
    for h in 0..heads {
        let g = h / group;
        for i in 0..q.len() {
            let mut s = Vec::new();
            for j in 0..k.len() {
                if causal && j > i {
                    break;
                }
                let mut dot = 0.0;
                for c in 0..hd {
                    dot += q[i][h * hd + c] * k[j][g * hd + c];
                }
                s.push(dot / (hd as f64).sqrt());
            }
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for (j, ej) in e.iter().enumerate() {
                for c in 0..hd {
                    out[i][h * hd + c] += ej / z * v[j][g * hd + c];
                }
            }
        }
    }
    out
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn ffn(x: &M, wg: &M, wu: &M, wd: &M) -> M {
    let g = mm(x, wg);
    let u = mm(x, wu);
    let h: M = g
        .iter()
        .zip(&u)
        .map(|(gr, ur)| gr.iter().zip(ur).map(|(a, b)| silu(*a) * b).collect())
        .collect();
    mm(&h, wd)
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn query_rows(segments: &[Segment], mode: QueryMode) -> Vec<usize> {
    (0..segments.len())
        .filter(|&i| match mode {
            QueryMode::All => true,
            QueryMode::TextOnly => segments[i] == Segment::Text,
            QueryMode::VisualOnly => segments[i] == Segment::FastVisual,
        })
        .collect()
}

struct Gate<'a> {
    mode: GateMode,
    w: Option<M>,
    b: Option<&'a [f64]>,
    gs: f64,
}

/// Gated cross-attention output for the rows in `q_rows` (queries already formed).
fn gated_cross(q: &M, gate_in: &M, slow_n: &M, wk: &M, wv: &M, wo: &M, gate: &Gate, cfg: &ModelConfig) -> M {
    let k = mm(slow_n, wk);
    let v = mm(slow_n, wv);
    let ctx = attention(q, &k, &v, cfg.num_heads, cfg.num_kv_heads, cfg.head_dim, false);
    let xp = mm(&ctx, wo);
    let mut out = xp.clone();
    match gate.mode {
        GateMode::Static => {
            for row in out.iter_mut() {
                for v in row.iter_mut() {
                    *v *= gate.gs;
                }
            }
        }
        _ => {
            let z = mm(gate_in, gate.w.as_ref().unwrap());
            let b = gate.b.unwrap();
            for (r, row) in out.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    let gi = if gate.mode == GateMode::TokenDynamic { 0 } else { c };
                    *v *= (z[r][gi] + b[gi]).tanh() * gate.gs;
                }
            }
        }
    }
    out
}

/// The whole stack, following the architecture description line by line.
/// Returns the final-normed hidden states.
pub fn stack(model: &Model, x0: &Tensor, layout: &SequenceLayout, slow: &Tensor) -> M {
    let cfg = &model.cfg;
    let eps = cfg.rms_eps;
    let d = cfg.hidden_dim;
    let t = x0.shape()[0];
    let pos: Vec<usize> = (0..t).collect();
    let rows = query_rows(layout.segments(), cfg.query_mode);
    let slow_m = if slow.shape()[0] == 0 { vec![] } else { to_m(slow) };
    let mut h = to_m(x0);
    for (i, host) in model.layers.iter().enumerate() {
        if let Some(s) = &model.standalone[i] {
            let a = &host.attn;
            let xn = rms(&h, s.norm.data(), eps);
            let mut merged = h.clone();
            if !rows.is_empty() {
                let gi: M = rows.iter().map(|&r| xn[r].clone()).collect();
                let q = rope(&mm(&gi, &to_m(s.wq.resolve(a))), &rows, cfg.head_dim, cfg.rope_theta);
                let sn = rms(&slow_m, s.norm.data(), eps);
                let gate = Gate {
                    mode: s.gate.mode,
                    w: s.gate.w.as_ref().map(to_m),
                    b: s.gate.b.as_ref().map(|b| b.data()),
                    gs: s.gate.warmup.data()[0],
                };
                let y = gated_cross(&q, &gi, &sn, &to_m(s.wk.resolve(a)), &to_m(s.wv.resolve(a)), &to_m(s.wo.resolve(a)), &gate, cfg);
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..d {
                        merged[r][c] += y[k][c];
                    }
                }
            }
            h = merged.clone();
            if let Some(f) = &s.ffn {
                let hn = rms(&merged, f.norm.data(), eps);
                let y = ffn(&hn, &to_m(&f.ffn.w_gate), &to_m(&f.ffn.w_up), &to_m(&f.ffn.w_down));
                let gs = f.warmup.data()[0];
                for r in 0..t {
                    for c in 0..d {
                        h[r][c] = merged[r][c] + y[r][c] * gs;
                    }
                }
            }
        }
        let a = &host.attn;
        let xn = rms(&h, host.input_norm.data(), eps);
        let q = rope(&mm(&xn, &to_m(&a.w_q)), &pos, cfg.head_dim, cfg.rope_theta);
        let k = rope(&mm(&xn, &to_m(&a.w_k)), &pos, cfg.head_dim, cfg.rope_theta);
        let v = mm(&xn, &to_m(&a.w_v));
        let ctx = attention(&q, &k, &v, cfg.num_heads, cfg.num_kv_heads, cfg.head_dim, true);
        let mut mid = add(&h, &mm(&ctx, &to_m(&a.w_o)));
        if let Some(b) = &model.branches[i] {
            if !rows.is_empty() {
                let qr: M = rows.iter().map(|&r| q[r].clone()).collect();
                let gi: M = rows.iter().map(|&r| xn[r].clone()).collect();
                let sn = rms(&slow_m, host.input_norm.data(), eps);
                let gate = Gate {
                    mode: b.gate.mode,
                    w: b.gate.w.as_ref().map(to_m),
                    b: b.gate.b.as_ref().map(|b| b.data()),
                    gs: b.gate.warmup.data()[0],
                };
                let y = gated_cross(&qr, &gi, &sn, &to_m(b.wk.resolve(a)), &to_m(b.wv.resolve(a)), &to_m(&a.w_o), &gate, cfg);
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..d {
                        mid[r][c] += y[k][c];
                    }
                }
            }
        }
        let hn = rms(&mid, host.post_norm.data(), eps);
        h = add(&mid, &ffn(&hn, &to_m(&host.ffn.w_gate), &to_m(&host.ffn.w_up), &to_m(&host.ffn.w_down)));
    }
    rms(&h, model.final_norm.data(), eps)
}

pub fn max_diff(a: &M, b: &Tensor) -> f64 {
    let bm = to_m(b);
    a.iter()
        .zip(&bm)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Frames as `[frame][channel][y][x]`.
pub type Frames = Vec<Vec<Vec<Vec<f64>>>>;

pub fn frames_of(t: &Tensor) -> Frames {
    let s = t.shape();
    let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
    (0..n)
        .map(|f| {
            (0..d)
                .map(|c| (0..h).map(|y| (0..w).map(|x| t.data()[((f * d + c) * h + y) * w + x]).collect()).collect())
                .collect()
        })
        .collect()
}

/// Fast-frame compression written from the step-by-step description:
/// zero-pad to a multiple of `k·t`, sample `max(⌊n'/k⌋, m)` frames at
/// `⌊i·n'/n''⌋`, then average-pool to `min(max(⌊n''/t⌋, m), n'')` frames.
pub fn compress(frames: &Frames, k: usize, t: usize, m: usize) -> Frames {
    let (d, h, w) = (frames[0].len(), frames[0][0].len(), frames[0][0][0].len());
    let zero = vec![vec![vec![0.0; w]; h]; d];
    let mut padded = frames.clone();
    while !padded.len().is_multiple_of(k * t) {
        padded.push(zero.clone());
    }
    let np = padded.len();
    let ns = std::cmp::max(np / k, m);
    let sampled: Frames = (0..ns).map(|i| padded[i * np / ns].clone()).collect();
    let out = std::cmp::min(std::cmp::max(ns / t, m), ns);
    let mut result = Vec::new();
    for i in 0..out {
        let start = (i * ns) / out;
        let end = ((i + 1) * ns).div_ceil(out);
        let mut acc = zero.clone();
        for f in &sampled[start..end] {
            for c in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        acc[c][y][x] += f[c][y][x];
                    }
                }
            }
        }
        for c in 0..d {
            for y in 0..h {
                for x in 0..w {
                    acc[c][y][x] /= (end - start) as f64;
                }
            }
        }
        result.push(acc);
    }
    result
}

/// Frame-major, row-major tokens of `d` channels.
pub fn flatten(frames: &Frames) -> M {
    let mut out = Vec::new();
    for f in frames {
        for y in 0..f[0].len() {
            for x in 0..f[0][0].len() {
                out.push(f.iter().map(|ch| ch[y][x]).collect());
            }
        }
    }
    out
}
