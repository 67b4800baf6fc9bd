//! Experiment runner: strict configs in, reproducible run directories out.
//!
//! [`run`] executes one experiment into
//! `out_root/<kind>/<config-hash-12>/<seed>/`, writing `metrics.json`, the
//! experiment's CSV/checkpoint artifacts, and finally `manifest.json` — the
//! resolved config, seed, code version, RNG scheme, and a hash inventory of
//! every other file. Re-running the manifest's config and seed reproduces
//! the inventory bit for bit. [`sweep`] fans one base config out along a
//! single field and aggregates the per-run metrics.

pub mod config;
pub mod manifest;

mod exact;
mod seq;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::error::{CoreError, Result};
use crate::rng::RNG_SCHEME;

pub use config::{
    default_seeds, exact_iterations_for, seq_iterations_for, AblateBoundaryConfig,
    AblateRatioConfig, AblateSamplerConfig, DataKind, ExactEvalConfig, ExactTrainConfig,
    ExperimentConfig, GenerateConfig, HybridSweepConfig, ObjectiveSpec, OptimSpec, SeqEvalConfig,
    SeqTrainConfig, SourceSpec, TimeSpec, VarianceProbeConfig, VerifyOracleConfig,
    EXACT_EPSILON, EXPERIMENT_KINDS, SEQ_EPSILON,
};
pub use manifest::{
    canonical_json, config_hash, hash_file, hash_value, inventory, FileRecord, RunManifest,
    MANIFEST_SCHEMA,
};

/// Where a finished run lives and what it produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: Value,
}

fn execute(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Value> {
    match config {
        ExperimentConfig::ExactTrain(c) => exact::run_exact_train(c, seed, dir),
        ExperimentConfig::ExactEval(c) => exact::run_exact_eval(c, seed, dir),
        ExperimentConfig::SeqTrain(c) => seq::run_seq_train(c, seed, dir),
        ExperimentConfig::SeqEval(c) => seq::run_seq_eval(c, seed, dir),
        ExperimentConfig::Generate(c) => seq::run_generate(c, seed, dir),
        ExperimentConfig::VarianceProbe(c) => seq::run_variance_probe(c, seed, dir),
        ExperimentConfig::AblateBoundary(c) => exact::run_ablate_boundary(c, seed, dir),
        ExperimentConfig::AblateRatio(c) => exact::run_ablate_ratio(c, seed, dir),
        ExperimentConfig::AblateSampler(c) => exact::run_ablate_sampler(c, seed, dir),
        ExperimentConfig::HybridSweep(c) => seq::run_hybrid_sweep(c, seed, dir),
        ExperimentConfig::VerifyOracle(c) => exact::run_verify_oracle(c, seed, dir),
    }
}

/// Run one experiment. The directory is derived from the resolved config's
/// hash (seed excluded) and the seed, and is wiped first so the inventory
/// reflects exactly this run.
pub fn run(
    config: &ExperimentConfig,
    seed_override: Option<u64>,
    out_root: &Path,
) -> Result<RunOutcome> {
    let diags = config.diagnostics();
    if !diags.is_empty() {
        return Err(CoreError::Config(diags.join("\n")));
    }
    let seed = seed_override.unwrap_or_else(|| config.seed());
    let resolved = config.resolved_value(seed)?;
    let hash = config_hash(&resolved);
    let dir = out_root.join(config.kind()).join(&hash[..12]).join(seed.to_string());
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;

    let start = Instant::now();
    let metrics = execute(config, seed, &dir)?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;

    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        experiment: config.kind().into(),
        config_hash: hash,
        seed,
        code_version: env!("CARGO_PKG_VERSION").into(),
        rng_scheme: RNG_SCHEME.into(),
        resolved_config: resolved,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files: inventory(&dir)?,
    };
    manifest.write(&dir)?;
    Ok(RunOutcome { dir, manifest, metrics })
}

/// Read, parse, and run a config file.
pub fn run_config_file(
    path: &Path,
    seed_override: Option<u64>,
    out_root: &Path,
) -> Result<RunOutcome> {
    let text = fs::read_to_string(path)
        .map_err(|e| CoreError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config = ExperimentConfig::parse(&text)?;
    run(&config, seed_override, out_root)
}

/// A finished sweep: one run per axis value plus the aggregate summary.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub runs: Vec<RunOutcome>,
    pub summary: Value,
}

/// Set `path` (dot-separated field names) inside a config object, creating
/// intermediate objects as needed.
fn set_dot_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CoreError::Config(format!("axis: malformed field path \"{path}\"")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor.as_object_mut().ok_or_else(|| {
            CoreError::Config(format!(
                "axis: \"{}\" is not an object, cannot descend into \"{part}\"",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert((*part).into(), value);
            return Ok(());
        }
        cursor = obj.entry(*part).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last part");
}

/// Run one independent experiment per axis value and aggregate the metrics.
/// Each variant re-parses strictly, so a mistyped axis fails like any other
/// unknown field.
pub fn sweep(
    base: &ExperimentConfig,
    axis: &str,
    values: &[Value],
    seed_override: Option<u64>,
    out_root: &Path,
) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(CoreError::Config("values: must list at least one value".into()));
    }
    let base_value = base.to_value();
    let base_hash = config_hash(&base.resolved_value(base.seed())?);

    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut variant = base_value.clone();
        set_dot_path(&mut variant, axis, v.clone())?;
        let text = serde_json::to_string(&variant).expect("JSON values serialize");
        let config = ExperimentConfig::parse(&text)
            .map_err(|e| CoreError::Config(format!("axis {axis} = {v}: {e}")))?;
        configs.push(config);
    }

    let mut runs = Vec::with_capacity(configs.len());
    let mut rows = Vec::with_capacity(configs.len());
    for (config, v) in configs.iter().zip(values) {
        let outcome = run(config, seed_override, out_root)?;
        rows.push(json!({
            "value": v,
            "config_hash": outcome.manifest.config_hash,
            "seed": outcome.manifest.seed,
            "dir": outcome.dir.display().to_string(),
            "metrics": outcome.metrics,
        }));
        runs.push(outcome);
    }

    let summary = json!({
        "schema": "dmf-sweep-summary/1",
        "experiment": base.kind(),
        "axis": axis,
        "base_config_hash": base_hash,
        "runs": rows,
    });
    let dir = out_root.join(format!(
        "{}-sweep-{}-{}",
        base.kind(),
        axis.replace('.', "-"),
        &base_hash[..12]
    ));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(SweepOutcome { dir, runs, summary })
}

// ── Tests ──────────────────────────────────────────────────────────────────
