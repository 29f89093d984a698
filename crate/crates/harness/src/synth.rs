//! Seeded synthetic frame features.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slowfast_core::Tensor;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Standard normal entries.
    Random,
    /// Every value of frame `f` equals `f`.
    Ramp,
    /// Zeros except a single 1.0 in frame `n/2`, channel 0, at the grid centre.
    Impulse,
}

impl FromStr for Pattern {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "random" => Ok(Pattern::Random),
            "ramp" => Ok(Pattern::Ramp),
            "impulse" => Ok(Pattern::Impulse),
            other => Err(CliError::Usage(format!("unknown pattern {other:?} (valid: random, ramp, impulse)"))),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Random => "random",
            Pattern::Ramp => "ramp",
            Pattern::Impulse => "impulse",
        })
    }
}

/// `n × d × h × w` frame features.
pub fn synth_frames(n: usize, d: usize, h: usize, w: usize, seed: u64, pattern: Pattern) -> Result<Tensor, CliError> {
    if n == 0 || d == 0 || h == 0 || w == 0 {
        return Err(CliError::Usage(format!("all dimensions must be positive, got n={n} d={d} h={h} w={w}")));
    }
    let shape = [n, d, h, w];
    let per = d * h * w;
    Ok(match pattern {
        Pattern::Random => Tensor::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)),
        Pattern::Ramp => {
            let data = (0..n).flat_map(|f| std::iter::repeat_n(f as f64, per)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches")
        }
        Pattern::Impulse => {
            let mut t = Tensor::zeros(&shape);
            t.data_mut()[(n / 2) * per + (h / 2) * w + w / 2] = 1.0;
            t
        }
    })
}

/// Synthetic text embeddings `[n × d]`.
pub fn synth_text(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_7874);
    Tensor::randn(&[n, d], 1.0, &mut rng)
}
