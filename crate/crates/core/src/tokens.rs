//! Slow and fast visual tokens from per-frame feature maps.
//!
//! Slow tokens are the 2×2 spatially pooled frames, flattened frame-major.
//! Fast tokens come from the four-step compression: zero-pad the frame axis
//! to a multiple of `sample_stride·pool_stride`, sample uniformly, pool
//! adaptively along time, flatten.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_MIN_FAST_FRAMES: usize = 16;

/// `n × d × H × W` frame features (channel-first per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    data: Tensor,
}

impl FrameFeatures {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::InvalidShape(format!(
                "frame features must be rank 4 (n×d×H×W), got {:?}",
                data.shape()
            )));
        }
        let s = data.shape();
        if s[0] == 0 || s[2] == 0 || s[3] == 0 {
            return Err(Error::InvalidShape(format!(
                "frame features need n, H, W ≥ 1, got {s:?}"
            )));
        }
        Ok(Self { data })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.height() * self.width()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    fn frame_len(&self) -> usize {
        self.channels() * self.tokens_per_frame()
    }

    /// Values of frame `f`, channel-major.
    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data.data()[f * n..(f + 1) * n]
    }

    /// Flatten into `[n·H·W × d]` tokens: frame-major, then row-major spatial.
    pub fn to_tokens(&self) -> Tensor {
        let (n, d, hw) = (self.frames(), self.channels(), self.tokens_per_frame());
        let mut out = Vec::with_capacity(n * hw * d);
        for f in 0..n {
            let frame = self.frame(f);
            for pos in 0..hw {
                for c in 0..d {
                    out.push(frame[c * hw + pos]);
                }
            }
        }
        Tensor::new(vec![n * hw, d], out).expect("token count matches")
    }
}

/// Sampling/pooling strides and the minimum fast-frame count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub sample_stride: usize,
    pub pool_stride: usize,
    pub min_fast_frames: usize,
}

impl CompressionConfig {
    pub fn new(sample_stride: usize, pool_stride: usize, min_fast_frames: usize) -> Result<Self> {
        if sample_stride == 0 || pool_stride == 0 || min_fast_frames == 0 {
            return Err(Error::Config(format!(
                "strides and minimum fast frames must be ≥ 1 (got s={sample_stride}, p={pool_stride}, m={min_fast_frames})"
            )));
        }
        Ok(Self {
            sample_stride,
            pool_stride,
            min_fast_frames,
        })
    }

    /// Length of the zero-padded frame axis.
    pub fn padded_len(&self, n_frames: usize) -> usize {
        let block = self.sample_stride * self.pool_stride;
        n_frames.div_ceil(block) * block
    }

    pub fn sampled_len(&self, n_frames: usize) -> usize {
        (self.padded_len(n_frames) / self.sample_stride).max(self.min_fast_frames)
    }

    pub fn pooled_len(&self, sampled: usize) -> usize {
        (sampled / self.pool_stride)
            .max(self.min_fast_frames)
            .min(sampled)
    }

    /// Number of fast frames produced from `n_frames` input frames.
    pub fn fast_frames(&self, n_frames: usize) -> usize {
        self.pooled_len(self.sampled_len(n_frames))
    }
}

/// Frame indices into the padded axis; an index `≥ n_frames` is a zero frame.
pub fn pad_and_sample(n_frames: usize, cfg: &CompressionConfig) -> Result<Vec<usize>> {
    if n_frames == 0 {
        return Err(Error::Usage("pad_and_sample needs at least one frame".into()));
    }
    let padded = cfg.padded_len(n_frames);
    let count = cfg.sampled_len(n_frames);
    Ok((0..count).map(|i| i * padded / count).collect())
}

/// Half-open input range averaged into output `i` when pooling `n` items to `out`.
pub fn adaptive_bucket(i: usize, n: usize, out: usize) -> (usize, usize) {
    let start = i * n / out;
    let end = ((i + 1) * n).div_ceil(out);
    (start, end)
}

/// Adaptive average pooling along the frame axis of an `n × …` tensor.
pub fn temporal_adaptive_pool(frames: &Tensor, cfg: &CompressionConfig) -> Result<Tensor> {
    let n = *frames
        .shape()
        .first()
        .ok_or_else(|| Error::InvalidShape("temporal pool of a rank-0 tensor".into()))?;
    if n == 0 {
        return Err(Error::Usage("temporal pool needs at least one frame".into()));
    }
    let out = cfg.pooled_len(n);
    let per = frames.len() / n;
    let src = frames.data();
    let mut data = vec![0.0; out * per];
    for i in 0..out {
        let (a, b) = adaptive_bucket(i, n, out);
        let dst = &mut data[i * per..(i + 1) * per];
        for f in a..b {
            for (d, s) in dst.iter_mut().zip(&src[f * per..(f + 1) * per]) {
                *d += s;
            }
        }
        let inv = (b - a) as f64;
        for d in dst.iter_mut() {
            *d /= inv;
        }
    }
    let mut shape = frames.shape().to_vec();
    shape[0] = out;
    Tensor::new(shape, data)
}

/// 2×2 average pooling of every frame and channel.
pub fn spatial_pool_2x2(f: &FrameFeatures) -> Result<FrameFeatures> {
    let (n, d, h, w) = (f.frames(), f.channels(), f.height(), f.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape(format!(
            "2×2 spatial pooling needs even height and width, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = f.tensor().data();
    let mut out = Vec::with_capacity(n * d * oh * ow);
    for plane in src.chunks(h * w) {
        for y in 0..oh {
            for x in 0..ow {
                let at = |yy: usize, xx: usize| plane[yy * w + xx];
                let s = at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1);
                out.push(s / 4.0);
            }
        }
    }
    FrameFeatures::new(Tensor::new(vec![n, d, oh, ow], out)?)
}

/// Fast tokens `[fast_frames·H·W × d]` from already pooled slow frames.
pub fn compress_fast(slow_frames: &FrameFeatures, cfg: &CompressionConfig) -> Result<Tensor> {
    let pooled = compress_fast_frames(slow_frames, cfg)?;
    Ok(pooled.to_tokens())
}

/// Same as [`compress_fast`] but keeps the frame structure.
pub fn compress_fast_frames(slow_frames: &FrameFeatures, cfg: &CompressionConfig) -> Result<FrameFeatures> {
    let n = slow_frames.frames();
    let indices = pad_and_sample(n, cfg)?;
    let per = slow_frames.frame_len();
    let mut gathered = Vec::with_capacity(indices.len() * per);
    for &i in &indices {
        if i < n {
            gathered.extend_from_slice(slow_frames.frame(i));
        } else {
            gathered.extend(std::iter::repeat_n(0.0, per));
        }
    }
    let mut shape = slow_frames.tensor().shape().to_vec();
    shape[0] = indices.len();
    let sampled = Tensor::new(shape, gathered)?;
    FrameFeatures::new(temporal_adaptive_pool(&sampled, cfg)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequences {
    /// `[n_frames·tokens_per_frame × d]`
    pub slow: Tensor,
    /// `[fast_frames·tokens_per_frame × d]`
    pub fast: Tensor,
    pub tokens_per_frame: usize,
    pub fast_frames: usize,
}

/// Spatially pool raw frame features and derive both token sets.
pub fn encode_tokens(raw: &FrameFeatures, cfg: &CompressionConfig) -> Result<TokenSequences> {
    let pooled = spatial_pool_2x2(raw)?;
    encode_pooled(&pooled, cfg)
}

/// Derive both token sets from frames that are already spatially pooled.
pub fn encode_pooled(pooled: &FrameFeatures, cfg: &CompressionConfig) -> Result<TokenSequences> {
    let fast = compress_fast_frames(pooled, cfg)?;
    Ok(TokenSequences {
        slow: pooled.to_tokens(),
        fast_frames: fast.frames(),
        fast: fast.to_tokens(),
        tokens_per_frame: pooled.tokens_per_frame(),
    })
}

/// Parsed `"<frames>-s<k>p<t>"` style configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameConfig {
    pub input_frames: usize,
    pub compression: CompressionConfig,
}

impl FrameConfig {
    pub const GRAMMAR: &'static str = "<frames>-[s<int>][p<int>] with at least one of s/p, e.g. 64-s4, 96-p6, 128-s2p4";
}

impl fmt::Display for FrameConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.compression;
        write!(f, "{}-", self.input_frames)?;
        if c.sample_stride != 1 || c.pool_stride == 1 {
            write!(f, "s{}", c.sample_stride)?;
        }
        if c.pool_stride != 1 {
            write!(f, "p{}", c.pool_stride)?;
        }
        Ok(())
    }
}

impl FromStr for FrameConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_frame_config(s)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: format!("{} (expected {})", msg.into(), FrameConfig::GRAMMAR),
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(format!("expected digits for {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        let v: usize = text.parse().map_err(|_| Error::Parse {
            pos: start,
            msg: format!("{what} out of range"),
        })?;
        if v == 0 {
            return Err(Error::Parse {
                pos: start,
                msg: format!("{what} must be ≥ 1"),
            });
        }
        Ok(v)
    }
}

/// Parse `"64-s4"`, `"96-p6"`, `"128-s2p4"` or `"128-s2-p4"`.
///
/// The minimum fast-frame count is set to [`DEFAULT_MIN_FAST_FRAMES`].
pub fn parse_frame_config(text: &str) -> Result<FrameConfig> {
    let mut c = Cursor {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let input_frames = c.number("frame count")?;
    if c.peek() != Some(b'-') {
        return Err(c.error("expected '-' after the frame count"));
    }
    c.pos += 1;
    let mut sample = None;
    let mut pool = None;
    if c.peek() == Some(b's') {
        c.pos += 1;
        sample = Some(c.number("sampling stride")?);
        if c.peek() == Some(b'-') && c.bytes.get(c.pos + 1) == Some(&b'p') {
            c.pos += 1;
        }
    }
    if c.peek() == Some(b'p') {
        c.pos += 1;
        pool = Some(c.number("pooling stride")?);
    }
    if sample.is_none() && pool.is_none() {
        return Err(c.error("expected 's<int>' or 'p<int>'"));
    }
    if c.pos != c.bytes.len() {
        return Err(c.error("unexpected trailing input"));
    }
    Ok(FrameConfig {
        input_frames,
        compression: CompressionConfig::new(
            sample.unwrap_or(1),
            pool.unwrap_or(1),
            DEFAULT_MIN_FAST_FRAMES,
        )?,
    })
}
