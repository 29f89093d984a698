use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::HeadLayout;

/// How the cross-attention output is scaled before it is merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// A single learnable scalar.
    Static,
    /// `tanh(x·w + b)` with one value per token, times the warm-up scalar.
    TokenDynamic,
    /// Same as `TokenDynamic` with one value per token and channel.
    ChannelDynamic,
}

/// Which sequence positions query the slow tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    All,
    VisualOnly,
    TextOnly,
}

/// Where the cross-attention branch lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Inside the host decoder layer, parallel to self-attention.
    Hybrid,
    /// A separate inserted layer with its own gated feed-forward block.
    StandaloneFfn,
    /// A separate inserted layer with cross-attention only.
    StandaloneNoffn,
}

/// Initialization of the cross-attention key/value projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Random,
    Share,
    Copy,
}

macro_rules! impl_names {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$(<$ty>::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(<$ty>::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

impl_names!(GateMode { Static => "static", TokenDynamic => "token_dynamic", ChannelDynamic => "channel_dynamic" });
impl_names!(QueryMode { All => "all", VisualOnly => "visual_only", TextOnly => "text_only" });
impl_names!(Integration { Hybrid => "hybrid", StandaloneFfn => "standalone_ffn", StandaloneNoffn => "standalone_noffn" });
impl_names!(InitMode { Random => "random", Share => "share", Copy => "copy" });

impl Integration {
    pub fn is_standalone(self) -> bool {
        !matches!(self, Integration::Hybrid)
    }
}

fn default_rms_eps() -> f64 {
    1e-6
}

fn default_rope_theta() -> f64 {
    10_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub hybrid_indices: Vec<usize>,
    pub gate_mode: GateMode,
    pub query_mode: QueryMode,
    pub integration: Integration,
    pub init_mode: InitMode,
    #[serde(default = "default_rms_eps")]
    pub rms_eps: f64,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f64,
    /// Seed for randomly initialized parameters.
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelConfig {
    /// 4 layers, d=64, 4 query heads over 2 KV heads, hybrid layers at [0, 2].
    pub fn toy() -> Self {
        Self {
            num_layers: 4,
            hidden_dim: 64,
            num_heads: 4,
            num_kv_heads: 2,
            head_dim: 16,
            ffn_dim: 256,
            vocab_size: 128,
            hybrid_indices: vec![0, 2],
            gate_mode: GateMode::TokenDynamic,
            query_mode: QueryMode::TextOnly,
            integration: Integration::Hybrid,
            init_mode: InitMode::Copy,
            rms_eps: default_rms_eps(),
            rope_theta: default_rope_theta(),
            init_seed: 0,
        }
    }

    /// 28-layer 7B-class host (d=3584, 28 query / 4 KV heads) with hybrid
    /// layers at [0, 8, 16, 24].
    pub fn reference_7b() -> Self {
        Self {
            num_layers: 28,
            hidden_dim: 3584,
            num_heads: 28,
            num_kv_heads: 4,
            head_dim: 128,
            ffn_dim: 18944,
            vocab_size: 152_064,
            hybrid_indices: vec![0, 8, 16, 24],
            gate_mode: GateMode::TokenDynamic,
            query_mode: QueryMode::TextOnly,
            integration: Integration::Hybrid,
            init_mode: InitMode::Copy,
            rms_eps: default_rms_eps(),
            rope_theta: 1_000_000.0,
            init_seed: 0,
        }
    }

    pub fn layout(&self) -> Result<HeadLayout> {
        HeadLayout::new(self.num_heads, self.num_kv_heads, self.head_dim)
    }

    pub fn q_width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn kv_width(&self) -> usize {
        self.num_kv_heads * self.head_dim
    }

    /// Width of the dynamic gate's output (1 per token, or d per token).
    pub fn gate_width(&self) -> usize {
        match self.gate_mode {
            GateMode::Static => 0,
            GateMode::TokenDynamic => 1,
            GateMode::ChannelDynamic => self.hidden_dim,
        }
    }

    pub fn is_hybrid_index(&self, layer: usize) -> bool {
        self.hybrid_indices.binary_search(&layer).is_ok()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        if self.num_layers == 0 || self.hidden_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("num_layers, hidden_dim and ffn_dim must be positive".into()));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("head_dim {} must be even", self.head_dim)));
        }
        if !(self.rms_eps > 0.0) || !(self.rope_theta > 0.0) {
            return Err(Error::Config("rms_eps and rope_theta must be positive".into()));
        }
        for pair in self.hybrid_indices.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Config(format!(
                    "hybrid_indices must be strictly increasing, got {:?}",
                    self.hybrid_indices
                )));
            }
        }
        if let Some(&bad) = self.hybrid_indices.iter().find(|&&i| i >= self.num_layers) {
            return Err(Error::Config(format!(
                "hybrid index {bad} out of range for {} layers",
                self.num_layers
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::toy().validate().unwrap();
        ModelConfig::reference_7b().validate().unwrap();
    }

    #[test]
    fn bad_indices() {
        let mut c = ModelConfig::toy();
        c.hybrid_indices = vec![2, 2];
        assert!(c.validate().is_err());
        c.hybrid_indices = vec![0, 4];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let mut v = serde_json::to_value(ModelConfig::toy()).unwrap();
        let back: ModelConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, ModelConfig::toy());
        v["mystery"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ModelConfig>(v).is_err());
    }

    #[test]
    fn unknown_variant_lists_valid_names() {
        let err = serde_json::from_str::<GateMode>("\"sigmoid\"").unwrap_err().to_string();
        assert!(err.contains("token_dynamic"), "{err}");
    }
}
