//! Command-line entry points: experiment execution with seed sweeps,
//! one-shot audits of saved models, exact metric reports, and
//! re-aggregation of existing output directories.
//!
//! Exit codes: 0 success, 2 config/parse validation failure, 3 mid-run
//! abort (partial outputs preserved), 4 audit aborted.

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::auditor::{audit_once, AuditError, AuditorConfig, SamplerKind};
use crate::game::{run, summarize, write_outputs, GameConfig, GameSummary};
use crate::metrics::{exact_metric, MetricKind};
use crate::model::{prediction_distribution, Classifier};
use crate::population::PopulationSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_AUDIT_ABORTED: i32 = 4;

fn default_replications() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub game: GameConfig,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub seed_base: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Parser, Debug)]
#[command(name = "fairgame", version, about = "Audit/debias simulation over drifting populations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run an experiment config: one game per replication plus an aggregate.
    Simulate(SimulateArgs),
    /// One-shot PAC audit of a saved model snapshot against a population spec.
    Audit(AuditArgs),
    /// Exact values of all metric kinds for a saved model on a spec.
    Metrics(MetricsArgs),
    /// Re-aggregate the per-replication summaries in an output directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Experiment config file (JSON).
    pub config: PathBuf,
    /// Dotted-path overrides, e.g. --set game.auditor.epsilon=0.02
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; falls back to the config's output_dir, then
    /// FAIRGAME_OUTPUT_DIR, then ./fairgame-out.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Maximum concurrent replications.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    /// Classifier snapshot (JSON).
    pub model: PathBuf,
    /// Population spec (JSON).
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value = "SP")]
    pub metric: MetricKind,
    #[arg(long, default_value = "uniform")]
    pub sampler: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    pub spec: PathBuf,
    pub model: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    pub output_dir: PathBuf,
}

/// Applies a `path.to.field=value` override to a JSON config value.
/// The value is parsed as JSON when possible and kept as a string
/// otherwise.
pub fn apply_override(config: &mut Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override '{spec}' is not of the form path=value"))?;
    let parsed = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut cursor = config;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if i + 1 == segments.len() {
            match cursor {
                Value::Object(map) => {
                    map.insert(seg.to_string(), parsed);
                    return Ok(());
                }
                _ => return Err(format!("'{path}' does not address an object field")),
            }
        }
        cursor = match cursor {
            Value::Object(map) => map
                .entry(seg.to_string())
                .or_insert_with(|| Value::Object(Default::default())),
            _ => return Err(format!("'{path}' does not address an object field")),
        };
    }
    unreachable!("split('.') yields at least one segment")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub replications: usize,
    pub v_t_estimated_mean: f64,
    pub v_t_estimated_std: f64,
    pub v_t_exact_mean: f64,
    pub v_t_exact_std: f64,
    pub regret_estimated_mean: f64,
    pub regret_exact_mean: f64,
    /// Fraction of replications with at least one anytime violation.
    pub violation_fraction: f64,
    /// Per-replication round from which the debias decision is constant.
    pub policy_settled_at: Vec<u64>,
    /// Replications whose decision had not settled by round 10.
    pub unsettled_by_10: Vec<usize>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate_summaries(summaries: &[GameSummary]) -> Aggregate {
    let ve: Vec<f64> = summaries.iter().map(|s| s.v_t_estimated).collect();
    let vx: Vec<f64> = summaries.iter().map(|s| s.v_t_exact).collect();
    let (ve_mean, ve_std) = mean_std(&ve);
    let (vx_mean, vx_std) = mean_std(&vx);
    let n = summaries.len() as f64;
    Aggregate {
        replications: summaries.len(),
        v_t_estimated_mean: ve_mean,
        v_t_estimated_std: ve_std,
        v_t_exact_mean: vx_mean,
        v_t_exact_std: vx_std,
        regret_estimated_mean: summaries.iter().map(|s| s.regret_estimated).sum::<f64>() / n,
        regret_exact_mean: summaries.iter().map(|s| s.regret_exact).sum::<f64>() / n,
        violation_fraction: summaries.iter().filter(|s| s.anytime_violations > 0).count() as f64
            / n,
        policy_settled_at: summaries.iter().map(|s| s.policy_settled_at).collect(),
        unsettled_by_10: summaries
            .iter()
            .enumerate()
            .filter(|(_, s)| s.policy_settled_at > 10)
            .map(|(i, _)| i)
            .collect(),
    }
}

fn resolve_output_dir(arg: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    arg.clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("FAIRGAME_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("fairgame-out"))
}

pub fn rep_dir(base: &Path, rep: usize) -> PathBuf {
    base.join(format!("rep_{rep:04}"))
}

pub fn cmd_simulate(args: &SimulateArgs) -> i32 {
    let raw = match std::fs::read_to_string(&args.config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let mut value: Value = match serde_json::from_str(&raw) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    for o in &args.overrides {
        if let Err(e) = apply_override(&mut value, o) {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    }
    let cfg: ExperimentConfig = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    if cfg.replications < 1 {
        eprintln!("error: replications must be >= 1");
        return EXIT_CONFIG;
    }
    if let Err(e) = cfg.game.validate() {
        eprintln!("error: invalid game config: {e}");
        return EXIT_CONFIG;
    }

    let out = resolve_output_dir(&args.output_dir, &cfg);
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_ABORT;
    }

    let jobs = args.jobs.max(1).min(cfg.replications);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<GameSummary, String>>>> =
        Mutex::new(vec![None; cfg.replications]);

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let rep = next.fetch_add(1, Ordering::SeqCst);
                if rep >= cfg.replications {
                    break;
                }
                let mut game_cfg = cfg.game.clone();
                game_cfg.seed = cfg.seed_base + rep as u64;
                let res = match run(&game_cfg) {
                    Ok(trace) => match write_outputs(&trace, &game_cfg, &rep_dir(&out, rep)) {
                        Ok(()) => Ok(summarize(&trace, &game_cfg)),
                        Err(e) => Err(format!("replication {rep}: write failed: {e}")),
                    },
                    Err(abort) => {
                        // Preserve whatever rounds completed.
                        let dir = rep_dir(&out, rep);
                        let _ = std::fs::create_dir_all(&dir);
                        let _ = std::fs::write(
                            dir.join("partial.json"),
                            serde_json::to_string_pretty(&abort.partial).unwrap_or_default(),
                        );
                        Err(format!("replication {rep}: {abort}"))
                    }
                };
                results.lock().unwrap()[rep] = Some(res);
            });
        }
    });

    let results = results.into_inner().unwrap();
    let mut summaries = Vec::with_capacity(cfg.replications);
    for res in results {
        match res.expect("every replication index visited") {
            Ok(s) => summaries.push(s),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_ABORT;
            }
        }
    }
    let aggregate = aggregate_summaries(&summaries);
    let json = serde_json::to_string_pretty(&aggregate).expect("aggregate serializes");
    if let Err(e) = std::fs::write(out.join("aggregate.json"), json + "\n") {
        eprintln!("error: cannot write aggregate: {e}");
        return EXIT_ABORT;
    }
    println!("wrote {} replications to {}", cfg.replications, out.display());
    EXIT_OK
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn cmd_audit(args: &AuditArgs) -> i32 {
    let model: Classifier = match load_json(&args.model) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let spec: PopulationSpec = match load_json(&args.spec) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = spec.validate() {
        eprintln!("error: {}: {e}", args.spec.display());
        return EXIT_CONFIG;
    }
    let sampler = match args.sampler.to_ascii_lowercase().as_str() {
        "uniform" => SamplerKind::Uniform,
        "stratified" => SamplerKind::Stratified,
        other => {
            eprintln!("error: unknown sampler '{other}'");
            return EXIT_CONFIG;
        }
    };
    let cfg = AuditorConfig {
        epsilon: args.epsilon,
        delta: args.delta,
        sampler,
        metric: args.metric,
        dp_denominator_floor: 0.05,
        pilot_per_group: 50,
    };
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    match audit_once(&cfg, &model, &spec, &mut rng) {
        Ok(estimate) => {
            println!("{}", serde_json::to_string_pretty(&estimate).expect("serializes"));
            EXIT_OK
        }
        Err(AuditError::AuditAborted { drawn, nominal }) => {
            eprintln!("error: audit aborted after {drawn} draws (nominal budget {nominal})");
            EXIT_AUDIT_ABORTED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ABORT
        }
    }
}

pub fn cmd_metrics(args: &MetricsArgs) -> i32 {
    let spec: PopulationSpec = match load_json(&args.spec) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = spec.validate() {
        eprintln!("error: {}: {e}", args.spec.display());
        return EXIT_CONFIG;
    }
    let model: Classifier = match load_json(&args.model) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let table = prediction_distribution(&model, &spec);
    let mut out = serde_json::Map::new();
    for kind in MetricKind::ALL {
        let entry = match exact_metric(kind, &table) {
            Ok(v) => serde_json::json!(v.value),
            Err(crate::metrics::MetricError::UndefinedConditional(_)) => {
                Value::String("UndefinedConditional".into())
            }
            Err(e) => Value::String(e.to_string()),
        };
        out.insert(kind.name().to_string(), entry);
    }
    println!("{}", serde_json::to_string_pretty(&Value::Object(out)).expect("serializes"));
    EXIT_OK
}

pub fn cmd_report(args: &ReportArgs) -> i32 {
    let mut summaries = Vec::new();
    let mut rep = 0usize;
    loop {
        let path = rep_dir(&args.output_dir, rep).join("summary.json");
        if !path.exists() {
            break;
        }
        match load_json::<GameSummary>(&path) {
            Ok(s) => summaries.push(s),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        }
        rep += 1;
    }
    if summaries.is_empty() {
        eprintln!(
            "error: no rep_*/summary.json found under {}",
            args.output_dir.display()
        );
        return EXIT_CONFIG;
    }
    let aggregate = aggregate_summaries(&summaries);
    let json = serde_json::to_string_pretty(&aggregate).expect("aggregate serializes");
    if let Err(e) = std::fs::write(args.output_dir.join("aggregate.json"), json.clone() + "\n") {
        eprintln!("error: cannot write aggregate: {e}");
        return EXIT_ABORT;
    }
    println!("{json}");
    EXIT_OK
}

pub fn dispatch(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Report(args) => cmd_report(args),
    }
}
