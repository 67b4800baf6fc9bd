//! `dmf` — run, sweep, and inspect kernel-model experiments.
//!
//! Every experiment is a strict JSON config dispatched on its `kind` field;
//! the subcommand must match that kind. Runs land in
//! `<out>/<kind>/<config-hash>/<seed>/` with `metrics.json` and a
//! `manifest.json` that suffices to reproduce the run bit for bit.
//!
//! Exit codes: 0 success, 2 invalid config (field-level diagnostics on
//! stderr), 3 training aborted on a non-finite loss, 1 anything else —
//! including a `verify-oracle` run whose checks do not pass.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dmf_core::runner::{
    config_hash, run, sweep, ExperimentConfig, RunOutcome, EXPERIMENT_KINDS,
};
use dmf_core::CoreError;

#[derive(Parser)]
#[command(name = "dmf", version, about = "Kernel-model experiment runner")]
struct Cli {
    /// Print every experiment kind's fully resolved default config as JSON
    /// and exit.
    #[arg(long)]
    list_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (strict JSON; unknown fields are rejected).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root (default: ./outputs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Base experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Config field to vary, as a dot path (e.g. `optim.iterations`).
    #[arg(long)]
    axis: String,
    /// Comma-separated values for the axis; each parses as JSON when it
    /// can and falls back to a string otherwise.
    #[arg(long)]
    values: String,
    /// Override every run's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root (default: ./outputs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an exact-chain kernel model.
    ExactTrain(RunArgs),
    /// Grade a saved exact-chain checkpoint.
    ExactEval(RunArgs),
    /// Train a sequence model (kernel or posterior).
    SeqTrain(RunArgs),
    /// Grade a saved sequence checkpoint at one or more step counts.
    SeqEval(RunArgs),
    /// Draw samples from any saved checkpoint.
    Generate(RunArgs),
    /// Probe the training targets' per-element variance.
    VarianceProbe(RunArgs),
    /// Compare the boundary construction against a penalty baseline.
    AblateBoundary(RunArgs),
    /// Sweep the wide-interval training fraction.
    AblateRatio(RunArgs),
    /// Sweep the time-sampling distribution.
    AblateSampler(RunArgs),
    /// Sweep the hybrid objective's CE weight.
    HybridSweep(RunArgs),
    /// Check the oracle invariants numerically.
    VerifyOracle(RunArgs),
    /// Fan one config out along a single field and aggregate the metrics.
    Sweep(SweepArgs),
}

impl Command {
    fn expected_kind(&self) -> &'static str {
        match self {
            Command::ExactTrain(_) => "exact-train",
            Command::ExactEval(_) => "exact-eval",
            Command::SeqTrain(_) => "seq-train",
            Command::SeqEval(_) => "seq-eval",
            Command::Generate(_) => "generate",
            Command::VarianceProbe(_) => "variance-probe",
            Command::AblateBoundary(_) => "ablate-boundary",
            Command::AblateRatio(_) => "ablate-ratio",
            Command::AblateSampler(_) => "ablate-sampler",
            Command::HybridSweep(_) => "hybrid-sweep",
            Command::VerifyOracle(_) => "verify-oracle",
            Command::Sweep(_) => unreachable!("sweep is dispatched separately"),
        }
    }
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NON_FINITE: u8 = 3;

/// Format a float for JSON even when it is NaN or infinite.
fn finite_or_string(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn error_record(err: &CoreError) -> (u8, Value) {
    match err {
        CoreError::Config(msg) => (
            EXIT_CONFIG,
            json!({"error": "config", "message": msg}),
        ),
        CoreError::NonFiniteLoss { step, loss, lr, grad_norm } => (
            EXIT_NON_FINITE,
            json!({
                "error": "non-finite-loss",
                "step": step,
                "loss": finite_or_string(*loss),
                "lr": finite_or_string(*lr),
                "grad_norm": finite_or_string(*grad_norm),
            }),
        ),
        other => (EXIT_RUNTIME, json!({"error": "runtime", "message": other.to_string()})),
    }
}

/// Where `run` would have put this run, for leaving an `error.json` behind.
fn run_dir_for(config: &ExperimentConfig, seed: Option<u64>, out_root: &Path) -> Option<PathBuf> {
    let seed = seed.unwrap_or_else(|| config.seed());
    let resolved = config.resolved_value(seed).ok()?;
    let hash = config_hash(&resolved);
    Some(out_root.join(config.kind()).join(&hash[..12]).join(seed.to_string()))
}

fn fail(err: &CoreError, error_json_dir: Option<&Path>) -> ExitCode {
    let (code, record) = error_record(err);
    eprintln!("{record}");
    if let Some(dir) = error_json_dir {
        // Best effort: the record also lands next to the partial outputs.
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("error.json"), record.to_string() + "\n");
        }
    }
    ExitCode::from(code)
}

fn list_defaults() -> ExitCode {
    let mut all = serde_json::Map::new();
    for kind in EXPERIMENT_KINDS {
        let cfg = ExperimentConfig::defaults_for(kind).expect("every listed kind has defaults");
        let resolved = cfg
            .resolved_value(cfg.seed())
            .expect("default configs resolve");
        all.insert(kind.into(), resolved);
    }
    println!("{}", serde_json::to_string_pretty(&Value::Object(all)).expect("valid JSON"));
    ExitCode::SUCCESS
}

fn load_config(path: &Path, expected_kind: &str) -> Result<ExperimentConfig, CoreError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CoreError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config = ExperimentConfig::parse(&text)?;
    if config.kind() != expected_kind {
        return Err(CoreError::Config(format!(
            "kind: the {expected_kind} command got a \"{}\" config",
            config.kind()
        )));
    }
    Ok(config)
}

fn announce(outcome: &RunOutcome) {
    println!("run complete: {}", outcome.dir.display());
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.metrics).expect("metrics are valid JSON")
    );
}

fn run_command(expected_kind: &str, args: &RunArgs) -> ExitCode {
    let out_root = args.out.clone().unwrap_or_else(|| PathBuf::from("outputs"));
    let config = match load_config(&args.config, expected_kind) {
        Ok(c) => c,
        Err(e) => return fail(&e, None),
    };
    match run(&config, args.seed, &out_root) {
        Ok(outcome) => {
            announce(&outcome);
            if expected_kind == "verify-oracle" && outcome.metrics["pass"] != json!(true) {
                eprintln!(
                    "{}",
                    json!({"error": "verification", "message": "oracle checks failed"})
                );
                return ExitCode::from(EXIT_RUNTIME);
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, run_dir_for(&config, args.seed, &out_root).as_deref()),
    }
}

fn parse_sweep_values(text: &str) -> Vec<Value> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| serde_json::from_str(t).unwrap_or_else(|_| Value::String(t.into())))
        .collect()
}

fn sweep_command(args: &SweepArgs) -> ExitCode {
    let out_root = args.out.clone().unwrap_or_else(|| PathBuf::from("outputs"));
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            return fail(
                &CoreError::Config(format!(
                    "cannot read config {}: {e}",
                    args.config.display()
                )),
                None,
            )
        }
    };
    let base = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return fail(&e, None),
    };
    let values = parse_sweep_values(&args.values);
    match sweep(&base, &args.axis, &values, args.seed, &out_root) {
        Ok(outcome) => {
            println!("sweep complete: {}", outcome.dir.join("summary.json").display());
            for run in &outcome.runs {
                println!("  {}", run.dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_defaults {
        return list_defaults();
    }
    match &cli.command {
        None => {
            eprintln!(
                "{}",
                json!({
                    "error": "usage",
                    "message": "pass a subcommand or --list-defaults; see dmf --help"
                })
            );
            ExitCode::from(EXIT_CONFIG)
        }
        Some(Command::Sweep(args)) => sweep_command(args),
        Some(cmd @ (Command::ExactTrain(args) | Command::ExactEval(args)
        | Command::SeqTrain(args) | Command::SeqEval(args) | Command::Generate(args)
        | Command::VarianceProbe(args) | Command::AblateBoundary(args)
        | Command::AblateRatio(args) | Command::AblateSampler(args)
        | Command::HybridSweep(args) | Command::VerifyOracle(args))) => {
            run_command(cmd.expected_kind(), args)
        }
    }
}
