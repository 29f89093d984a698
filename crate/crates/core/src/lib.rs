//! Building blocks for a slow-fast video language model: the visual token
//! pipeline, hybrid decoder layers with gated cross-attention, and an
//! analytic FLOPs/parameter cost model.

pub mod config;
pub mod cost;
pub mod decoder;
pub mod error;
pub mod numerics;
pub mod tokens;

pub use error::{Error, Result};
pub use numerics::Tensor;
