//! Binary tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "SFTF" | version: u16 | rank: u16 | width: u8 | dims: u64 × rank | payload
//! ```
//!
//! `width` is the element size in bytes (4 or 8); the payload holds
//! `product(dims)` row-major floats of that width.

use std::fs;
use std::io::Write;
use std::path::Path;

use slowfast_core::Tensor;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SFTF";
pub const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 2 + 1;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("not a tensor fixture (bad magic)")]
    Magic,
    #[error("unsupported fixture version {0} (this build reads version {VERSION})")]
    Version(u16),
    #[error("unsupported element width {0} (expected 4 or 8)")]
    Width(u8),
    #[error("truncated or oversized fixture: {0}")]
    Length(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            32 => Some(Precision::F32),
            64 => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn width(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

pub fn encode(t: &Tensor, precision: Precision) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * t.rank() + t.len() * precision.width() as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u16).to_le_bytes());
    out.push(precision.width());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match precision {
        Precision::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        Precision::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> Result<[u8; N], FixtureError> {
    let s = bytes
        .get(*at..*at + N)
        .ok_or_else(|| FixtureError::Length(format!("header ends at byte {}", bytes.len())))?;
    *at += N;
    Ok(s.try_into().expect("slice of length N"))
}

/// Decode a fixture; values are widened to f64. Returns the stored precision too.
pub fn decode(bytes: &[u8]) -> Result<(Tensor, Precision), FixtureError> {
    let mut at = 0;
    if &take::<4>(bytes, &mut at)? != MAGIC {
        return Err(FixtureError::Magic);
    }
    let version = u16::from_le_bytes(take(bytes, &mut at)?);
    if version != VERSION {
        return Err(FixtureError::Version(version));
    }
    let rank = u16::from_le_bytes(take(bytes, &mut at)?) as usize;
    let width = take::<1>(bytes, &mut at)?[0];
    let precision = match width {
        4 => Precision::F32,
        8 => Precision::F64,
        w => return Err(FixtureError::Width(w)),
    };
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(bytes, &mut at)?);
        dims.push(usize::try_from(d).map_err(|_| FixtureError::Length(format!("dimension {d} too large")))?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| FixtureError::Length("element count overflows".into()))?;
    let payload = &bytes[at..];
    match count.checked_mul(width as usize) {
        Some(n) if n == payload.len() => {}
        _ => {
            return Err(FixtureError::Length(format!(
                "dims {dims:?} need {count} × {width} bytes, payload has {}",
                payload.len()
            )))
        }
    }
    let data: Vec<f64> = match precision {
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    let t = Tensor::new(dims, data).map_err(|e| FixtureError::Length(e.to_string()))?;
    Ok((t, precision))
}

pub fn write(path: &Path, t: &Tensor, precision: Precision) -> Result<(), FixtureError> {
    let io = |source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&encode(t, precision)).map_err(io)
}

pub fn read(path: &Path) -> Result<Tensor, FixtureError> {
    let bytes = fs::read(path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(decode(&bytes)?.0)
}
