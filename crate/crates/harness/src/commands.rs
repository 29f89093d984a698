//! Subcommand definitions and implementations.
//!
//! Each command returns the text for stdout; `main` prints it and maps
//! errors to exit codes (2 usage/config, 1 failed check).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use slowfast_core::cost::{cost_report, table7_report_with_text, Arch};
use slowfast_core::decoder::{
    build_sequence, check_stack_gradients, decoder_stack_forward, stack_grads, CrossKind, GradCheckOptions, Model,
    GRAD_TOLERANCE,
};
use slowfast_core::tokens::{encode_pooled, spatial_pool_2x2, FrameFeatures};

use crate::ablate::{parse_matrix, render_table, run_matrix, write_records};
use crate::config::RunConfig;
use crate::fixture::{self, Precision};
use crate::health::{probe_inputs, HealthOptions};
use crate::params::{load_params, save_params};
use crate::selftest::run_selftest;
use crate::synth::{synth_frames, synth_text, Pattern};
use crate::variants::expand_modes;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "slowfast", version, about = "Slow-fast video token pipeline, hybrid decoder and cost model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive slow and fast token fixtures from a frame-feature fixture.
    Compress(CompressArgs),
    /// Run the decoder stack on token fixtures.
    Forward(ForwardArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Report forward FLOPs and parameter counts.
    Flops(FlopsArgs),
    /// Run the health suite over an ablation matrix.
    Ablate(AblateArgs),
    /// Write a synthetic frame-feature fixture.
    Synth(SynthArgs),
    /// Run every invariant suite and the efficiency-table check.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// Expected number of input frames (must match the config and the fixture).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame config such as 64-p4, 96-s4 or 128-s2p4.
    #[arg(long)]
    pub config: String,
    /// Input fixture, rank 4: frames × channels × height × width.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output prefix; writes PREFIX.slow.sftf, PREFIX.fast.sftf and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Apply 2×2 spatial average pooling before deriving tokens.
    #[arg(long)]
    pub pool2x2: bool,
    /// Minimum number of fast frames.
    #[arg(long)]
    pub min_fast: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub precision: u32,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    /// Run config: JSON file, or `toy` / `reference`.
    #[arg(long, default_value = "toy")]
    pub model: String,
    #[arg(long)]
    pub slow: PathBuf,
    #[arg(long)]
    pub fast: PathBuf,
    /// Text embeddings fixture `[n × d]`; synthesized from the seed when absent.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub text_len: usize,
    /// Load parameters from a directory written by --save-params.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub save_params: Option<PathBuf>,
    /// key=value, e.g. warmup=0, gate_mode=static, seed=3.
    #[arg(long = "override")]
    pub overrides: Vec<String>,
    /// Drop every cross-attention addition.
    #[arg(long)]
    pub no_hybrid: bool,
    /// Write per-layer cross-attention weights and gate values here.
    #[arg(long)]
    pub dump_attn: Option<PathBuf>,
    /// Hidden-state output fixture (default: OUTPUT_PATH.hidden.sftf from the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "toy")]
    pub model: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `all` or a comma list of mode names (e.g. static,text_only,share).
    #[arg(long, default_value = "all")]
    pub modes: String,
    #[arg(long, default_value_t = 6)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Warm-up value for every gate during the check.
    #[arg(long, default_value_t = 0.5)]
    pub warmup: f64,
    /// Test hook: add an offset to the analytic gradients of this group.
    #[arg(long)]
    pub corrupt: Option<String>,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Print the published efficiency table next to the model's values.
    #[arg(long)]
    pub reference: bool,
    /// Run config for a custom sweep (default: reference).
    #[arg(long)]
    pub model: Option<String>,
    /// Comma list of input frame counts to sweep.
    #[arg(long, value_delimiter = ',')]
    pub frames: Vec<usize>,
    /// Fast frames for the slow-fast rows of a sweep.
    #[arg(long, default_value_t = 16)]
    pub fast_frames: usize,
    /// Text positions (default: the config's value).
    #[arg(long)]
    pub text_tokens: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_gradcheck: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub h: usize,
    #[arg(long)]
    pub w: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "random")]
    pub pattern: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub precision: u32,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value = "toy")]
    pub model: String,
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Compress(a) => compress(a),
        Command::Forward(a) => forward(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Flops(a) => flops(a),
        Command::Ablate(a) => ablate(a),
        Command::Synth(a) => synth(a),
        Command::Selftest(a) => selftest(a),
    }
}

fn core(e: slowfast_core::Error) -> CliError {
    CliError::from_core(e)
}

fn precision(bits: u32) -> Result<Precision, CliError> {
    Precision::from_bits(bits).ok_or_else(|| CliError::Usage(format!("precision must be 32 or 64, got {bits}")))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(v).expect("json serializes") + "\n")?;
    Ok(())
}

pub fn compress(a: CompressArgs) -> Result<String, CliError> {
    let mut fc: slowfast_core::tokens::FrameConfig = a.config.parse().map_err(core)?;
    if let Some(m) = a.min_fast {
        fc.compression = slowfast_core::tokens::CompressionConfig::new(fc.compression.sample_stride, fc.compression.pool_stride, m)
            .map_err(core)?;
    }
    let p = precision(a.precision)?;
    let raw = fixture::read(&a.input)?;
    let frames = FrameFeatures::new(raw).map_err(core)?;
    if let Some(n) = a.frames {
        if n != fc.input_frames {
            return Err(CliError::Usage(format!("--frames {n} disagrees with config {fc}")));
        }
    }
    if frames.frames() != fc.input_frames {
        return Err(CliError::Usage(format!(
            "config {fc} expects {} frames, fixture has {}",
            fc.input_frames,
            frames.frames()
        )));
    }
    let pooled = if a.pool2x2 { spatial_pool_2x2(&frames).map_err(core)? } else { frames };
    let seqs = encode_pooled(&pooled, &fc.compression).map_err(core)?;
    let slow_path = with_suffix(&a.out, ".slow.sftf");
    let fast_path = with_suffix(&a.out, ".fast.sftf");
    fixture::write(&slow_path, &seqs.slow, p)?;
    fixture::write(&fast_path, &seqs.fast, p)?;
    write_json(
        &with_suffix(&a.out, ".json"),
        &json!({
            "command": "compress",
            "config": fc.to_string(),
            "sample_stride": fc.compression.sample_stride,
            "pool_stride": fc.compression.pool_stride,
            "min_fast_frames": fc.compression.min_fast_frames,
            "pool2x2": a.pool2x2,
            "precision": a.precision,
            "input_frames": fc.input_frames,
            "tokens_per_frame": seqs.tokens_per_frame,
            "fast_frames": seqs.fast_frames,
            "slow_tokens": seqs.slow.rows(),
            "fast_tokens": seqs.fast.rows(),
        }),
    )?;
    Ok(format!(
        "slow_frames={} slow_tokens={} fast_frames={} fast_tokens={} tokens_per_frame={}\n",
        fc.input_frames,
        seqs.slow.rows(),
        seqs.fast_frames,
        seqs.fast.rows(),
        seqs.tokens_per_frame
    ))
}

fn tokens_fixture(path: &Path, d: usize, what: &str) -> Result<slowfast_core::Tensor, CliError> {
    let t = fixture::read(path)?;
    if t.rank() != 2 || t.cols() != d {
        return Err(CliError::Usage(format!("{what} fixture has shape {:?}, expected [n × {d}]", t.shape())));
    }
    Ok(t)
}

pub fn forward(a: ForwardArgs) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(&a.model)?;
    let mut warmup = None;
    for o in &a.overrides {
        if let Some(v) = cfg.apply_override(o)? {
            warmup = Some(v);
        }
    }
    let p = cfg.precision()?;
    let d = cfg.model.hidden_dim;
    let mut model = Model::seeded(&cfg.model, cfg.seed).map_err(core)?;
    if let Some(dir) = &a.params {
        load_params(&mut model, dir)?;
    }
    if let Some(v) = warmup {
        model.set_all_warmups(v);
    }
    if a.no_hybrid {
        model = model.without_cross();
    }
    if let Some(dir) = &a.save_params {
        save_params(&model, dir, p)?;
    }
    let slow = tokens_fixture(&a.slow, d, "slow")?;
    let fast = tokens_fixture(&a.fast, d, "fast")?;
    let text = match &a.text {
        Some(path) => tokens_fixture(path, d, "text")?,
        None => {
            if a.text_len == 0 {
                return Err(CliError::Usage("--text-len must be at least 1".into()));
            }
            synth_text(a.text_len, d, cfg.seed)
        }
    };
    let h0 = build_sequence(&fast, &text).map_err(core)?;
    let out = decoder_stack_forward(&model, &h0, &slow).map_err(core)?;
    let out_path = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.hidden.sftf", cfg.output_path)));
    fixture::write(&out_path, &out.hidden.x, p)?;

    let mut dumped = Vec::new();
    if let Some(dir) = &a.dump_attn {
        fs::create_dir_all(dir)?;
        for tr in &out.traces {
            let kind = match tr.kind {
                CrossKind::Hybrid => "hybrid",
                CrossKind::Standalone => "standalone",
            };
            let stem = format!("layer{}.{kind}", tr.layer);
            let s = tr.weights.shape().to_vec();
            let (heads, rows, m) = (s[0], s[1], s[2]);
            let mut mean = slowfast_core::Tensor::zeros(&[rows, m]);
            for h in 0..heads {
                for (o, v) in mean.data_mut().iter_mut().zip(&tr.weights.data()[h * rows * m..(h + 1) * rows * m]) {
                    *o += v / heads as f64;
                }
            }
            fixture::write(&dir.join(format!("{stem}.attn.sftf")), &tr.weights, p)?;
            fixture::write(&dir.join(format!("{stem}.attn_mean.sftf")), &mean, p)?;
            fixture::write(&dir.join(format!("{stem}.gates.sftf")), &tr.gates, p)?;
            dumped.push(json!({ "layer": tr.layer, "kind": kind, "stem": stem, "query_rows": tr.rows, "weights_shape": s }));
        }
        write_json(&dir.join("index.json"), &json!({ "seed": cfg.seed, "layers": dumped }))?;
    }
    write_json(
        &with_suffix(&out_path, ".json"),
        &json!({
            "command": "forward",
            "config": cfg,
            "seed": cfg.seed,
            "warmup_override": warmup,
            "no_hybrid": a.no_hybrid,
            "fast_tokens": fast.rows(),
            "text_tokens": text.rows(),
            "slow_tokens": slow.rows(),
            "checksum": format!("{:016x}", out.hidden.x.fingerprint()),
        }),
    )?;
    Ok(format!(
        "tokens={} hidden_dim={} cross_layers={} checksum={:016x} out={}\n",
        h0.len(),
        d,
        out.traces.len(),
        out.hidden.x.fingerprint(),
        out_path.display()
    ))
}

pub fn gradcheck(a: GradcheckArgs) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(&a.model)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if !(1e-7..=1e-3).contains(&a.eps) {
        return Err(CliError::Usage(format!("--eps must lie in [1e-7, 1e-3], got {}", a.eps)));
    }
    let variants = expand_modes(&cfg.model, &a.modes)?;
    let opts = GradCheckOptions {
        eps: a.eps,
        samples: a.samples.max(1),
        seed: cfg.seed,
    };
    let mut text = String::new();
    let _ = writeln!(
        text,
        "gradcheck seed={} eps={:e} samples={} warmup={} precision=64 tolerance={:e}",
        cfg.seed, a.eps, opts.samples, a.warmup, GRAD_TOLERANCE
    );
    let mut reports = Vec::new();
    let mut failed = 0;
    for v in &variants {
        let mcfg = v.apply(&cfg.model);
        let mut model = Model::seeded(&mcfg, cfg.seed).map_err(core)?;
        model.set_all_warmups(a.warmup);
        let inp = probe_inputs(mcfg.hidden_dim, cfg.seed);
        let mut grads = stack_grads(&model, &inp.h0, &inp.slow, &inp.probe).map_err(core)?;
        if let Some(group) = &a.corrupt {
            let ids: Vec<_> = model.param_ids().into_iter().filter(|id| id.group().name() == group).collect();
            if ids.is_empty() && group != "input" {
                return Err(CliError::Usage(format!("--corrupt: no parameters in group {group:?}")));
            }
            for id in ids {
                grads.corrupt(id, 1e-2);
            }
        }
        let r = check_stack_gradients(&model, &inp.h0, &inp.slow, &inp.probe, &grads, opts).map_err(core)?;
        let _ = writeln!(text, "{}", v.name());
        for g in &r.groups {
            let ok = g.worst_rel_err <= GRAD_TOLERANCE;
            let _ = writeln!(
                text,
                "  {:<16} {:>10.3e} {:>5}  {}",
                g.group,
                g.worst_rel_err,
                g.checked,
                if ok { "pass" } else { "FAIL" }
            );
        }
        for name in &r.absent {
            let _ = writeln!(text, "  {name:<16} {:>10} {:>5}  absent", "-", 0);
        }
        if !r.passed() {
            failed += 1;
        }
        reports.push(json!({ "variant": v, "name": v.name(), "report": r }));
    }
    let _ = writeln!(text, "variants={} failed={failed}", variants.len());
    if let Some(path) = &a.json {
        write_json(path, &json!({ "seed": cfg.seed, "config": cfg, "eps": a.eps, "variants": reports }))?;
    }
    if failed > 0 {
        return Err(CliError::Check(format!("{text}gradient check failed for {failed} variant(s)")));
    }
    Ok(text)
}

pub fn flops(a: FlopsArgs) -> Result<String, CliError> {
    let cfg = match &a.model {
        Some(m) => RunConfig::load(m)?,
        None => RunConfig::reference(),
    };
    let cost = cfg.cost_config();
    cost.validate().map_err(core)?;
    if a.frames.contains(&0) {
        return Err(CliError::Usage("--frames entries must be at least 1".into()));
    }
    let text_tokens = a.text_tokens.unwrap_or(cost.text_tokens);
    let mut out = String::new();
    let mut doc = serde_json::Map::new();
    if a.reference || a.frames.is_empty() {
        let table = table7_report_with_text(&cost, text_tokens).map_err(core)?;
        let sens = table7_report_with_text(&cost, 0).map_err(core)?;
        out.push_str(&table.render_text());
        let _ = writeln!(out, "sensitivity (text_tokens=0):");
        for r in &sens.rows {
            let _ = writeln!(
                out,
                "  {:<10} {:>6} llm_tf={:.2} ref={:.2} err={:.2}%",
                r.published.arch.label(),
                r.frames_label(),
                r.model_llm_tflops,
                r.published.llm_tflops,
                r.llm_rel_err * 100.0
            );
        }
        let pass = table.all_within();
        let _ = writeln!(out, "table {}", if pass { "within tolerance" } else { "OUT OF TOLERANCE" });
        doc.insert("table".into(), serde_json::to_value(&table).expect("serializes"));
        doc.insert("sensitivity_text0".into(), serde_json::to_value(&sens).expect("serializes"));
        if a.reference && !pass {
            return Err(CliError::Check(out));
        }
    }
    if !a.frames.is_empty() {
        let first = cost_report(&cost, Arch::SelfAttn, a.frames[0], a.frames[0], text_tokens).map_err(core)?;
        let _ = writeln!(
            out,
            "{:>7} {:>8} {:>12} {:>8} {:>14} {:>10}",
            "frames", "tokens", "self_attn_tf", "ratio", "slow_fast_tf", "ca_tf"
        );
        let mut rows = Vec::new();
        for &n in &a.frames {
            let sa = cost_report(&cost, Arch::SelfAttn, n, n, text_tokens).map_err(core)?;
            let sf = cost_report(&cost, Arch::SlowFast, n, a.fast_frames, text_tokens).map_err(core)?;
            let ratio = sa.total_tflops() / first.total_tflops();
            let _ = writeln!(
                out,
                "{:>7} {:>8} {:>12.2} {:>7.2}x {:>14.2} {:>10.3}",
                n,
                sa.tokens_in,
                sa.total_tflops(),
                ratio,
                sf.total_tflops(),
                sf.xattn_tflops()
            );
            rows.push(json!({ "frames": n, "self_attn": sa, "slow_fast": sf, "self_attn_ratio": ratio }));
        }
        doc.insert("sweep".into(), serde_json::Value::Array(rows));
    }
    if a.json {
        doc.insert("text_tokens".into(), json!(text_tokens));
        doc.insert("config".into(), serde_json::to_value(&cfg).expect("serializes"));
        return Ok(serde_json::to_string_pretty(&serde_json::Value::Object(doc)).expect("serializes") + "\n");
    }
    Ok(out)
}

pub fn ablate(a: AblateArgs) -> Result<String, CliError> {
    let text = fs::read_to_string(&a.matrix).map_err(|e| CliError::Usage(format!("{}: {e}", a.matrix.display())))?;
    let m = parse_matrix(&text)?;
    let opts = HealthOptions {
        grad: if a.no_gradcheck { None } else { HealthOptions::default().grad },
        ..HealthOptions::default()
    };
    let records = run_matrix(&m, opts)?;
    let summary = write_records(&a.out, &m, &records)?;
    let mut out = render_table(&records);
    let _ = writeln!(out, "records={} failed={}", summary.records, summary.failed.len());
    if !summary.failed.is_empty() {
        return Err(CliError::Check(out));
    }
    Ok(out)
}

pub fn synth(a: SynthArgs) -> Result<String, CliError> {
    let pattern: Pattern = a.pattern.parse()?;
    let p = precision(a.precision)?;
    let t = synth_frames(a.n, a.d, a.h, a.w, a.seed, pattern)?;
    fixture::write(&a.out, &t, p)?;
    write_json(
        &with_suffix(&a.out, ".json"),
        &json!({ "command": "synth", "n": a.n, "d": a.d, "h": a.h, "w": a.w, "seed": a.seed, "pattern": pattern.to_string(), "precision": a.precision }),
    )?;
    Ok(format!("wrote {} shape={:?} pattern={pattern} seed={}\n", a.out.display(), t.shape(), a.seed))
}

pub fn selftest(a: SelftestArgs) -> Result<String, CliError> {
    let cfg = RunConfig::load(&a.model)?;
    let checks = run_selftest(&cfg);
    let mut out = String::new();
    for c in &checks {
        let _ = writeln!(out, "{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(out, "checks={} failed={failed}", checks.len());
    if failed > 0 {
        return Err(CliError::Check(out));
    }
    Ok(out)
}

