//! Ablation variants: named points of the gate × query × integration × init grid.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use slowfast_core::config::{GateMode, InitMode, Integration, ModelConfig, QueryMode};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub gate_mode: GateMode,
    pub query_mode: QueryMode,
    pub integration: Integration,
    pub init_mode: InitMode,
}

impl Variant {
    pub fn of(cfg: &ModelConfig) -> Self {
        Self {
            gate_mode: cfg.gate_mode,
            query_mode: cfg.query_mode,
            integration: cfg.integration,
            init_mode: cfg.init_mode,
        }
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            gate_mode: self.gate_mode,
            query_mode: self.query_mode,
            integration: self.integration,
            init_mode: self.init_mode,
            ..base.clone()
        }
    }

    /// `gate.query.integration.init`, safe as a file stem.
    pub fn name(&self) -> String {
        format!("{}.{}.{}.{}", self.gate_mode, self.query_mode, self.integration, self.init_mode)
    }
}

/// Parse an enum value by its snake_case name; the error lists valid names.
pub fn parse_name<T: DeserializeOwned>(axis: &str, name: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|e| CliError::Usage(format!("{axis}: {e}")))
}

fn or_base<T: Copy>(v: &[T], d: T) -> Vec<T> {
    if v.is_empty() {
        vec![d]
    } else {
        v.to_vec()
    }
}

/// Cartesian product of the listed values; an empty axis keeps `base`'s value.
pub fn cartesian(
    base: &ModelConfig,
    gates: &[GateMode],
    queries: &[QueryMode],
    integrations: &[Integration],
    inits: &[InitMode],
) -> Vec<Variant> {
    let b = Variant::of(base);
    let (gs, qs, is, ms) = (
        or_base(gates, b.gate_mode),
        or_base(queries, b.query_mode),
        or_base(integrations, b.integration),
        or_base(inits, b.init_mode),
    );
    let mut out = Vec::new();
    for &integration in &is {
        for &gate_mode in &gs {
            for &query_mode in &qs {
                for &init_mode in &ms {
                    out.push(Variant {
                        gate_mode,
                        query_mode,
                        integration,
                        init_mode,
                    });
                }
            }
        }
    }
    out
}

/// Expand a `--modes` list: `all` selects every gate, query and integration
/// value; other entries are value names from any axis. Axes not mentioned
/// keep the base configuration's value.
pub fn expand_modes(base: &ModelConfig, modes: &str) -> Result<Vec<Variant>, CliError> {
    let (mut gs, mut qs, mut is, mut ms) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    fn push<T: PartialEq + Copy>(v: &mut Vec<T>, x: T) {
        if !v.contains(&x) {
            v.push(x);
        }
    }
    for tok in modes.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if tok == "all" {
            GateMode::ALL.iter().for_each(|&g| push(&mut gs, g));
            QueryMode::ALL.iter().for_each(|&q| push(&mut qs, q));
            Integration::ALL.iter().for_each(|&i| push(&mut is, i));
        } else if let Some(&g) = GateMode::ALL.iter().find(|g| g.name() == tok) {
            push(&mut gs, g);
        } else if let Some(&q) = QueryMode::ALL.iter().find(|q| q.name() == tok) {
            push(&mut qs, q);
        } else if let Some(&i) = Integration::ALL.iter().find(|i| i.name() == tok) {
            push(&mut is, i);
        } else if let Some(&m) = InitMode::ALL.iter().find(|m| m.name() == tok) {
            push(&mut ms, m);
        } else {
            return Err(CliError::Usage(format!("unknown mode {tok:?}; valid: all, {}", valid_names())));
        }
    }
    Ok(cartesian(base, &gs, &qs, &is, &ms))
}

pub fn valid_names() -> String {
    let mut names: Vec<&str> = Vec::new();
    names.extend(GateMode::ALL.iter().map(|g| g.name()));
    names.extend(QueryMode::ALL.iter().map(|q| q.name()));
    names.extend(Integration::ALL.iter().map(|i| i.name()));
    names.extend(InitMode::ALL.iter().map(|m| m.name()));
    names.join(", ")
}
