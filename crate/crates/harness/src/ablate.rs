//! Ablation matrix runner.
//!
//! Matrix file (JSON):
//!
//! ```json
//! { "version": 1,
//!   "base": "toy",
//!   "seed": 0,
//!   "axes": { "gate_mode": ["static", "token_dynamic"], "query_mode": ["text_only"] } }
//! ```
//!
//! `axes` expands to the cartesian product (missing axes keep the base
//! value); alternatively `variants` lists explicit combinations, each field
//! optional. `base` is a built-in name or an inline run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use slowfast_core::config::{GateMode, InitMode, Integration, QueryMode};

use crate::config::{RunConfig, CONFIG_VERSION};
use crate::health::{run_variant, HealthOptions, VariantRecord};
use crate::variants::{cartesian, parse_name, Variant};
use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Axes {
    #[serde(default)]
    gate_mode: Vec<String>,
    #[serde(default)]
    query_mode: Vec<String>,
    #[serde(default)]
    integration: Vec<String>,
    #[serde(default)]
    init_mode: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialVariant {
    gate_mode: Option<String>,
    query_mode: Option<String>,
    integration: Option<String>,
    init_mode: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    version: u32,
    #[serde(default)]
    base: Option<Value>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    axes: Option<Axes>,
    #[serde(default)]
    variants: Option<Vec<PartialVariant>>,
}

#[derive(Debug, Clone)]
pub struct Matrix {
    pub base: RunConfig,
    pub variants: Vec<Variant>,
}

fn names<T: serde::de::DeserializeOwned>(axis: &str, v: &[String]) -> Result<Vec<T>, CliError> {
    v.iter().map(|n| parse_name(axis, n)).collect()
}

pub fn parse_matrix(text: &str) -> Result<Matrix, CliError> {
    let m: MatrixFile = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("matrix: {e}")))?;
    if m.version != CONFIG_VERSION {
        return Err(CliError::Usage(format!("matrix: unsupported version {} (expected {CONFIG_VERSION})", m.version)));
    }
    let mut base = match &m.base {
        None => RunConfig::toy(),
        Some(Value::String(s)) => RunConfig::load(s)?,
        Some(v) => RunConfig::from_json(&v.to_string())?,
    };
    if let Some(s) = m.seed {
        base.seed = s;
    }
    let variants = match (&m.axes, &m.variants) {
        (Some(_), Some(_)) => return Err(CliError::Usage("matrix: give either \"axes\" or \"variants\", not both".into())),
        (None, None) => return Err(CliError::Usage("matrix: needs \"axes\" or \"variants\"".into())),
        (Some(a), None) => cartesian(
            &base.model,
            &names::<GateMode>("gate_mode", &a.gate_mode)?,
            &names::<QueryMode>("query_mode", &a.query_mode)?,
            &names::<Integration>("integration", &a.integration)?,
            &names::<InitMode>("init_mode", &a.init_mode)?,
        ),
        (None, Some(list)) => {
            let b = Variant::of(&base.model);
            list.iter()
                .map(|p| {
                    Ok(Variant {
                        gate_mode: p.gate_mode.as_deref().map(|n| parse_name("gate_mode", n)).transpose()?.unwrap_or(b.gate_mode),
                        query_mode: p.query_mode.as_deref().map(|n| parse_name("query_mode", n)).transpose()?.unwrap_or(b.query_mode),
                        integration: p
                            .integration
                            .as_deref()
                            .map(|n| parse_name("integration", n))
                            .transpose()?
                            .unwrap_or(b.integration),
                        init_mode: p.init_mode.as_deref().map(|n| parse_name("init_mode", n)).transpose()?.unwrap_or(b.init_mode),
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?
        }
    };
    if variants.is_empty() {
        return Err(CliError::Usage("matrix: no variants".into()));
    }
    Ok(Matrix { base, variants })
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub base: RunConfig,
    pub records: usize,
    pub failed: Vec<String>,
}

/// Run every variant (in parallel; results keep matrix order).
pub fn run_matrix(m: &Matrix, opts: HealthOptions) -> Result<Vec<VariantRecord>, CliError> {
    let opts = HealthOptions {
        seed: m.base.seed,
        ..opts
    };
    m.variants.par_iter().map(|&v| run_variant(&m.base.model, v, opts)).collect()
}

pub fn write_records(dir: &Path, m: &Matrix, records: &[VariantRecord]) -> Result<Summary, CliError> {
    fs::create_dir_all(dir)?;
    for r in records {
        let text = serde_json::to_string_pretty(r).expect("record serializes");
        fs::write(dir.join(format!("{}.json", r.name)), text + "\n")?;
    }
    let summary = Summary {
        seed: m.base.seed,
        base: m.base.clone(),
        records: records.len(),
        failed: records.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    Ok(summary)
}

pub fn render_table(records: &[VariantRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:<12} {:<17} {:<7} {:>9} {:>10} {:>10}  status",
        "gate", "query", "integration", "init", "fast_dx", "rows_dev", "grad_err"
    );
    for r in records {
        let val = |n: &str| r.checks.iter().find(|c| c.name == n);
        let fast = match val("fast_rows_unchanged") {
            Some(c) if c.applicable => format!("{:.1e}", c.value),
            _ => "-".into(),
        };
        let rows = val("attention_row_sums").map_or("-".into(), |c| format!("{:.1e}", c.value));
        let grad = r.gradcheck.as_ref().map_or("-".into(), |g| format!("{:.1e}", g.worst()));
        let v = r.variant;
        let _ = writeln!(
            s,
            "{:<16} {:<12} {:<17} {:<7} {:>9} {:>10} {:>10}  {}",
            v.gate_mode.name(),
            v.query_mode.name(),
            v.integration.name(),
            v.init_mode.name(),
            fast,
            rows,
            grad,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    s
}
