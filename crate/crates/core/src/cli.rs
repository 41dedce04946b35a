//! The `tdss` command-line driver.
//!
//! Every subcommand reads one JSON config (all keys optional), applies
//! `--override key=value` edits and `--seed`, echoes the effective config to
//! `<output>/effective_config.json` and writes its reports next to it.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::discrepancy::{
    bound_terms, estimate_smoothness, feature_linf_quantile, mmd2, tvd, BoundDiagnostics,
    BoundInputs, DiscreteDistribution,
};
use crate::error::{Error, Result};
use crate::graph::{
    benchmark_configs, generate_synthetic_pair, load_bundle, motif_census, save_bundle, BundleStats, GraphBundle,
    MotifCensus, SynthConfig,
};
use crate::model::{classify, encode, per_node_cross_entropy, LossBreakdown, Params};
use crate::sampling::{build_sampled_adjacency, SamplerMode};
use crate::seed;
use crate::training::{evaluate, export_embeddings, history_jsonl, train, Metrics, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "tdss", version, about = "Graph domain adaptation with target-domain structural smoothing")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs (created if needed).
    #[arg(long, default_value = "out")]
    pub output: PathBuf,
    /// `dotted.key=value`; the value is parsed as JSON, falling back to a string.
    #[arg(long = "override", value_name = "K=V")]
    pub overrides: Vec<String>,
    /// Master seed; also reseeds generated graphs.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Khop,
    Rw,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write params.bin, history.jsonl and metrics.json.
    Train(Common),
    /// Evaluate saved params and write metrics.json.
    Eval(Common),
    /// Build the sampled target adjacency; writes sampled_edges.tsv and stats.json.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        walk_length: Option<usize>,
        #[arg(long)]
        num_walks: Option<usize>,
    },
    /// Generate the synthetic source/target bundles.
    Synth(Common),
    /// Write diagnostics.json with bound terms, motif census and smoothness.
    Diag(Common),
}

/// Generated source/target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthPair {
    pub source: SynthConfig,
    pub target: SynthConfig,
}

impl Default for SynthPair {
    fn default() -> Self {
        let (source, target) = benchmark_configs(500, 0);
        Self { source, target }
    }
}

/// Options for `diag`; unset values are estimated from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagConfig {
    pub k: usize,
    pub r: Option<f64>,
    pub xi: f64,
    pub gamma: Option<f64>,
    pub upsilon: Option<f64>,
    pub phi: Option<f64>,
}

impl Default for DiagConfig {
    fn default() -> Self {
        Self {
            k: 2,
            r: None,
            xi: 0.05,
            gamma: None,
            upsilon: None,
            phi: None,
        }
    }
}

/// Keys that sit beside the training keys at the top level of a config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Source bundle directory; the synthetic pair is used when absent.
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub synth: SynthPair,
    /// Params file for `eval`/`diag`.
    pub params: Option<PathBuf>,
    /// Also write target_embeddings.tsv after training.
    pub export_embeddings: bool,
    pub diag: DiagConfig,
}

const DATA_KEYS: [&str; 6] = ["source", "target", "synth", "params", "export_embeddings", "diag"];

/// Effective configuration of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn to_value(&self) -> Value {
        let mut obj = match serde_json::to_value(&self.train).expect("config serialises") {
            Value::Object(m) => m,
            _ => unreachable!("struct serialises to an object"),
        };
        if let Value::Object(d) = serde_json::to_value(&self.data).expect("config serialises") {
            obj.extend(d);
        }
        Value::Object(obj)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(obj) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let (data, train): (Map<String, Value>, Map<String, Value>) =
            obj.into_iter().partition(|(k, _)| DATA_KEYS.contains(&k.as_str()));
        let train: TrainConfig = serde_json::from_value(Value::Object(train))
            .map_err(|e| Error::Config(e.to_string()))?;
        let data: DataConfig =
            serde_json::from_value(Value::Object(data)).map_err(|e| Error::Config(e.to_string()))?;
        train.validate()?;
        data.synth.source.validate()?;
        data.synth.target.validate()?;
        Ok(Self { train, data })
    }

    /// Defaults, then the config file, then overrides, then `--seed`.
    pub fn resolve(config: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut value = Self::default().to_value();
        if let Some(path) = config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, file, "")?;
        }
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let mut cfg = Self::from_value(value)?;
        if let Some(s) = seed {
            cfg.train.seed = s;
            cfg.data.synth.source.seed = seed::derive(s, "synth/source");
            cfg.data.synth.target.seed = seed::derive(s, "synth/target");
        }
        Ok(cfg)
    }
}

/// Deep-merges `patch` into `base`, rejecting keys that `base` lacks.
fn merge(base: &mut Value, patch: Value, prefix: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => return Err(Error::Config(format!("unknown config key `{path}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn apply_override(value: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut *value;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    *slot = parsed;
    Ok(())
}

/// Loads the bundles named in the config, or generates the synthetic pair.
pub fn load_pair(data: &DataConfig) -> Result<(GraphBundle, GraphBundle)> {
    match (&data.source, &data.target) {
        (Some(s), Some(t)) => Ok((load_bundle(s)?, load_bundle(t)?)),
        (None, None) => generate_synthetic_pair(&data.synth.source, &data.synth.target),
        _ => Err(Error::Config("set both `source` and `target`, or neither".into())),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    write_file(path, &(text + "\n"))
}

#[derive(Debug, Serialize)]
struct MetricsReport {
    source: Option<Metrics>,
    target: Option<Metrics>,
    final_loss: Option<LossBreakdown>,
}

#[derive(Debug, Serialize)]
struct SampleStats {
    mode: SamplerMode,
    num_nodes: usize,
    num_edges: usize,
    num_sampled_edges: usize,
    rho: f64,
    isolated_nodes: usize,
}

#[derive(Debug, Serialize)]
struct SmoothnessReport {
    phi_s: f64,
    phi_t: f64,
    k: usize,
    r: f64,
}

#[derive(Debug, Serialize)]
struct DomainReport {
    stats: BundleStats,
    census: MotifCensus,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    bound: BoundDiagnostics,
    smoothness: SmoothnessReport,
    source: DomainReport,
    target: DomainReport,
}

fn params_for(cfg: &RunConfig, source: &GraphBundle, target: &GraphBundle) -> Result<Params> {
    match &cfg.data.params {
        Some(path) => {
            let p = Params::load(path)?;
            if p.feature_dim() != source.feature_dim() || p.num_classes() != source.num_classes {
                return Err(Error::Data("params do not match the bundle dimensions".into()));
            }
            if p.kind != cfg.train.encoder.kind {
                return Err(Error::Config("params were trained with a different encoder kind".into()));
            }
            Ok(p)
        }
        None => Ok(train(source, target, &cfg.train)?.params),
    }
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (source, target) = load_pair(&cfg.data)?;
    let result = train(&source, &target, &cfg.train)?;
    let enc = &cfg.train.encoder;
    result.params.save(out.join("params.bin"))?;
    write_file(&out.join("history.jsonl"), &history_jsonl(&result.history))?;
    let report = MetricsReport {
        source: evaluate(&source, &result.params, enc, enc.prop_layers_source)?,
        target: result.target_metrics,
        final_loss: result.history.last().map(|r| LossBreakdown {
            l_gc: r.l_gc,
            l_da: r.l_da,
            l_sr: r.l_sr,
            total: r.total,
        }),
    };
    write_json(&out.join("metrics.json"), &report)?;
    if cfg.data.export_embeddings {
        export_embeddings(&result.params, &target, enc, enc.prop_layers_target, out.join("target_embeddings.tsv"))?;
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.data.params.is_none() {
        return Err(Error::Config("eval needs `params` in the config".into()));
    }
    let (source, target) = load_pair(&cfg.data)?;
    let params = params_for(cfg, &source, &target)?;
    let enc = &cfg.train.encoder;
    let report = MetricsReport {
        source: evaluate(&source, &params, enc, enc.prop_layers_source)?,
        target: evaluate(&target, &params, enc, enc.prop_layers_target)?,
        final_loss: None,
    };
    write_json(&out.join("metrics.json"), &report)
}

fn cmd_sample(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (_, target) = load_pair(&cfg.data)?;
    let sampler = cfg.train.resolved_sampler();
    let sa = build_sampled_adjacency(&target.graph, &sampler)?;
    let edges = sa.edges();
    let mut text = String::new();
    for (u, v) in &edges {
        let _ = writeln!(text, "{u}\t{v}");
    }
    write_file(&out.join("sampled_edges.tsv"), &text)?;
    let stats = SampleStats {
        mode: sampler.mode,
        num_nodes: target.num_nodes(),
        num_edges: target.graph.num_edges(),
        num_sampled_edges: edges.len(),
        rho: sa.rho,
        isolated_nodes: sa.degrees.iter().filter(|&&d| d == 0).count(),
    };
    write_json(&out.join("stats.json"), &stats)
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (source, target) = generate_synthetic_pair(&cfg.data.synth.source, &cfg.data.synth.target)?;
    save_bundle(&source, out.join("source"))?;
    save_bundle(&target, out.join("target"))
}

fn max_row_norm(b: &GraphBundle) -> f64 {
    (0..b.num_nodes())
        .map(|i| b.features.row_vals(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn cmd_diag(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (source, target) = load_pair(&cfg.data)?;
    let params = params_for(cfg, &source, &target)?;
    let enc = &cfg.train.encoder;
    let diag = &cfg.data.diag;
    let mut unused = seed::rng(0);
    let hs = encode(&source, &params, enc, enc.prop_layers_source, false, &mut unused)?;
    let ht = encode(&target, &params, enc, enc.prop_layers_target, false, &mut unused)?;
    let logits_s = classify(&hs, &params)?;
    let logits_t = classify(&ht, &params)?;
    let labels = source
        .labels
        .as_deref()
        .ok_or_else(|| Error::Data("source bundle must be labelled".into()))?;
    let losses = per_node_cross_entropy(&logits_s, labels);
    let source_risk = losses.iter().sum::<f64>() / losses.len().max(1) as f64;

    let r = match diag.r {
        Some(r) => r,
        None => feature_linf_quantile(&source.features, 0.5, cfg.train.seed)?,
    };
    // identical feature rows give a zero median; fall back to the largest gap
    let r = if r > 0.0 { r } else { feature_linf_quantile(&source.features, 1.0, cfg.train.seed)?.max(1e-12) };
    let phi_s = estimate_smoothness(&hs, &source, diag.k, r)?;
    let phi_t = estimate_smoothness(&ht, &target, diag.k, r)?;
    let classes = source.num_classes;
    let tvd_value = tvd(
        &DiscreteDistribution::histogram(&logits_s.argmax_rows(), classes)?,
        &DiscreteDistribution::histogram(&logits_t.argmax_rows(), classes)?,
    )?;
    let mmd = mmd2(&hs, &ht, &cfg.train.kernel)?.value;
    let gamma = diag
        .gamma
        .unwrap_or_else(|| 2.0 * max_row_norm(&source).max(max_row_norm(&target)))
        .max(f64::MIN_POSITIVE);
    let upsilon = diag
        .upsilon
        .unwrap_or_else(|| losses.iter().copied().fold(0.0, f64::max))
        .max(f64::MIN_POSITIVE);
    let bound = bound_terms(&BoundInputs {
        gamma,
        upsilon,
        phi_s,
        phi_t,
        phi: diag.phi,
        tvd: Some(tvd_value),
        mmd: Some(mmd),
        source_risk: Some(source_risk),
        xi: diag.xi,
        r,
        k: diag.k,
        m: source.num_nodes(),
        n: target.num_nodes(),
        d: source.feature_dim(),
    })?;
    let report = Diagnostics {
        bound,
        smoothness: SmoothnessReport {
            phi_s,
            phi_t,
            k: diag.k,
            r,
        },
        source: DomainReport {
            stats: source.stats(),
            census: motif_census(&source.graph),
        },
        target: DomainReport {
            stats: target.stats(),
            census: motif_census(&target.graph),
        },
    };
    write_json(&out.join("diagnostics.json"), &report)
}

fn execute(args: Args) -> Result<()> {
    let (common, sample_overrides) = match &args.command {
        Command::Train(c) | Command::Eval(c) | Command::Synth(c) | Command::Diag(c) => (c, Vec::new()),
        Command::Sample {
            common,
            mode,
            k,
            walk_length,
            num_walks,
        } => {
            let mut extra = Vec::new();
            if let Some(m) = mode {
                let name = match m {
                    ModeArg::Khop => "khop",
                    ModeArg::Rw => "rw",
                };
                extra.push(format!("sampler.mode=\"{name}\""));
            }
            extra.extend(k.map(|v| format!("sampler.k={v}")));
            extra.extend(walk_length.map(|v| format!("sampler.walk_length={v}")));
            extra.extend(num_walks.map(|v| format!("sampler.num_walks={v}")));
            (common, extra)
        }
    };
    let overrides: Vec<String> = common.overrides.iter().cloned().chain(sample_overrides).collect();
    let cfg = RunConfig::resolve(common.config.as_deref(), &overrides, common.seed)?;
    let out = &common.output;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("effective_config.json"), &cfg.to_value())?;
    match &args.command {
        Command::Train(_) => cmd_train(&cfg, out),
        Command::Eval(_) => cmd_eval(&cfg, out),
        Command::Sample { .. } => cmd_sample(&cfg, out),
        Command::Synth(_) => cmd_synth(&cfg, out),
        Command::Diag(_) => cmd_diag(&cfg, out),
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
