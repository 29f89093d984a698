//! Straight-line fast-frame compression used by the self-test as a
//! cross-check of the library pipeline. Frames are flat `Vec<f64>` each.

/// Zero-pad to a multiple of `k·t`, take `max(⌊n'/k⌋, m)` uniform samples,
/// then average-pool to `min(max(⌊n''/t⌋, m), n'')` frames.
pub fn compress_frames(frames: &[Vec<f64>], k: usize, t: usize, m: usize) -> Vec<Vec<f64>> {
    let per = frames[0].len();
    let mut padded: Vec<Vec<f64>> = frames.to_vec();
    while !padded.len().is_multiple_of(k * t) {
        padded.push(vec![0.0; per]);
    }
    let np = padded.len();
    let ns = if np / k > m { np / k } else { m };
    let mut sampled = Vec::with_capacity(ns);
    for i in 0..ns {
        sampled.push(padded[i * np / ns].clone());
    }
    let mut out_len = ns / t;
    if out_len < m {
        out_len = m;
    }
    if out_len > ns {
        out_len = ns;
    }
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let lo = i * ns / out_len;
        let mut hi = (i + 1) * ns / out_len;
        if hi * out_len < (i + 1) * ns {
            hi += 1;
        }
        let mut acc = vec![0.0; per];
        for f in &sampled[lo..hi] {
            for c in 0..per {
                acc[c] += f[c];
            }
        }
        for a in acc.iter_mut() {
            *a /= (hi - lo) as f64;
        }
        out.push(acc);
    }
    out
}
