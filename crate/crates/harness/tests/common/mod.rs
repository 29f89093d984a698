//! Shared helpers for the harness integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// `frames[f]` holds one frame as a flat `channels·height·width` block.
pub type Frames = Vec<Vec<f64>>;

/// Fast-frame compression written from the prose description alone: pad
/// with zero frames up to a multiple of `k·t`, keep `max(⌊n'/k⌋, m)` frames
/// at indices `⌊i·n'/n''⌋`, then average consecutive buckets down to
/// `min(max(⌊n''/t⌋, m), n'')` frames. Bucket `i` out of `o` over `s`
/// frames covers `[⌊i·s/o⌋, ⌈(i+1)·s/o⌉)`.
pub fn compress_oracle(frames: &Frames, k: usize, t: usize, m: usize) -> Frames {
    let block = frames[0].len();
    let mut padded = frames.clone();
    let kt = k * t;
    let target = frames.len().div_ceil(kt) * kt;
    padded.resize(target, vec![0.0; block]);
    let n1 = padded.len();
    let n2 = (n1 / k).max(m);
    let sampled: Frames = (0..n2).map(|i| padded[i * n1 / n2].clone()).collect();
    let n3 = (n2 / t).max(m).min(n2);
    (0..n3)
        .map(|i| {
            let lo = i * n2 / n3;
            let hi = ((i + 1) * n2).div_ceil(n3);
            let mut acc = vec![0.0; block];
            for f in &sampled[lo..hi] {
                for (a, v) in acc.iter_mut().zip(f) {
                    *a += v;
                }
            }
            let count = (hi - lo) as f64;
            acc.iter().map(|a| a / count).collect()
        })
        .collect()
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_slowfast"))
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin()).args(args).current_dir(dir).output().expect("binary runs")
}

/// Two-layer model small enough for quick end-to-end runs.
pub const TINY_CONFIG: &str = r#"{
  "version": 1,
  "model": {
    "num_layers": 2,
    "hidden_dim": 16,
    "num_heads": 4,
    "num_kv_heads": 2,
    "head_dim": 4,
    "ffn_dim": 32,
    "vocab_size": 16,
    "hybrid_indices": [1],
    "gate_mode": "token_dynamic",
    "query_mode": "text_only",
    "integration": "hybrid",
    "init_mode": "copy",
    "rms_eps": 1e-6,
    "rope_theta": 10000.0,
    "init_seed": 0
  },
  "seed": 7
}
"#;

/// Every regular file under `root`, as sorted relative paths with contents.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_path_buf();
                out.push((rel, std::fs::read(&p).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}
