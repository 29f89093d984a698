//! Versioned JSON run configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slowfast_core::config::{GateMode, InitMode, Integration, ModelConfig, QueryMode};
use slowfast_core::cost::CostConfig;
use slowfast_core::tokens::FrameConfig;

use crate::fixture::Precision;
use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

fn default_compression() -> String {
    "64-p4".into()
}

fn default_precision() -> u32 {
    64
}

fn default_output() -> String {
    "out".into()
}

/// Cost-model constants that are not part of the decoder itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub vision_encoder_params: u64,
    pub projector_input_dim: usize,
    pub qkv_bias: bool,
    pub tied_embeddings: bool,
    pub count_lm_head: bool,
    pub tokens_per_frame: usize,
    pub text_tokens: usize,
}

impl Default for CostSection {
    fn default() -> Self {
        let r = CostConfig::reference();
        Self {
            vision_encoder_params: r.vision_encoder_params,
            projector_input_dim: r.projector_input_dim,
            qkv_bias: r.qkv_bias,
            tied_embeddings: r.tied_embeddings,
            count_lm_head: r.count_lm_head,
            tokens_per_frame: r.tokens_per_frame,
            text_tokens: r.text_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: ModelConfig,
    /// Frame-config string such as `"64-p4"`.
    #[serde(default = "default_compression")]
    pub compression: String,
    #[serde(default)]
    pub seed: u64,
    /// Width of floats written to fixtures; computation is always 64-bit.
    #[serde(default = "default_precision")]
    pub precision: u32,
    #[serde(default = "default_output")]
    pub output_path: String,
    #[serde(default)]
    pub cost: CostSection,
}

impl RunConfig {
    pub fn toy() -> Self {
        Self::with_model(ModelConfig::toy())
    }

    pub fn reference() -> Self {
        Self::with_model(CostConfig::reference().model)
    }

    fn with_model(model: ModelConfig) -> Self {
        Self {
            version: CONFIG_VERSION,
            model,
            compression: default_compression(),
            seed: 0,
            precision: default_precision(),
            output_path: default_output(),
            cost: CostSection::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => return Err(CliError::Usage(format!("config: unsupported version {v} (expected {CONFIG_VERSION})"))),
            None => return Err(CliError::Usage("config: missing integer \"version\" field".into())),
        }
        let c: Self = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    /// A path to a JSON file, or one of the built-in names `toy` and `reference`.
    pub fn load(spec: &str) -> Result<Self, CliError> {
        match spec {
            "toy" => Ok(Self::toy()),
            "reference" | "reference_7b" => Ok(Self::reference()),
            path => {
                let text = fs::read_to_string(Path::new(path)).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(CliError::from_core)?;
        self.frame_config()?;
        self.precision()?;
        Ok(())
    }

    pub fn frame_config(&self) -> Result<FrameConfig, CliError> {
        self.compression.parse().map_err(CliError::from_core)
    }

    pub fn precision(&self) -> Result<Precision, CliError> {
        Precision::from_bits(self.precision)
            .ok_or_else(|| CliError::Usage(format!("precision must be 32 or 64, got {}", self.precision)))
    }

    pub fn cost_config(&self) -> CostConfig {
        let c = &self.cost;
        CostConfig {
            model: self.model.clone(),
            vision_encoder_params: c.vision_encoder_params,
            projector_input_dim: c.projector_input_dim,
            qkv_bias: c.qkv_bias,
            tied_embeddings: c.tied_embeddings,
            count_lm_head: c.count_lm_head,
            tokens_per_frame: c.tokens_per_frame,
            text_tokens: c.text_tokens,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<Option<f64>, CliError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {kv:?} is not key=value")))?;
        fn parse<T: serde::de::DeserializeOwned>(key: &str, v: &str) -> Result<T, CliError> {
            serde_json::from_value(serde_json::Value::String(v.to_string()))
                .map_err(|e| CliError::Usage(format!("{key}: {e}")))
        }
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
            v.parse().map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
        }
        match k {
            "warmup" => return Ok(Some(num::<f64>(k, v)?)),
            "seed" => self.seed = num(k, v)?,
            "init_seed" => self.model.init_seed = num(k, v)?,
            "precision" => self.precision = num(k, v)?,
            "compression" => self.compression = v.to_string(),
            "gate_mode" => self.model.gate_mode = parse::<GateMode>(k, v)?,
            "query_mode" => self.model.query_mode = parse::<QueryMode>(k, v)?,
            "integration" => self.model.integration = parse::<Integration>(k, v)?,
            "init_mode" => self.model.init_mode = parse::<InitMode>(k, v)?,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown override key {other:?} (valid: warmup, seed, init_seed, precision, compression, gate_mode, query_mode, integration, init_mode)"
                )))
            }
        }
        self.validate()?;
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_defaults() {
        let c = RunConfig::toy();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        let minimal = format!("{{\"version\":1,\"model\":{}}}", serde_json::to_string(&ModelConfig::toy()).unwrap());
        assert_eq!(RunConfig::from_json(&minimal).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::toy().to_json()).unwrap();
        v["colour"] = serde_json::json!("red");
        assert!(RunConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::toy().to_json()).unwrap();
        v["version"] = serde_json::json!(2);
        let err = RunConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::toy();
        assert_eq!(c.apply_override("warmup=0.5").unwrap(), Some(0.5));
        c.apply_override("gate_mode=static").unwrap();
        assert_eq!(c.model.gate_mode, GateMode::Static);
        let err = c.apply_override("gate_mode=sigmoid").unwrap_err().to_string();
        assert!(err.contains("channel_dynamic"), "{err}");
        assert!(c.apply_override("nope=1").is_err());
    }

    #[test]
    fn reference_cost_matches_core() {
        assert_eq!(RunConfig::reference().cost_config(), CostConfig::reference());
    }
}
