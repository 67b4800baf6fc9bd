//! Executors for the sequence experiments: training, checkpoint grading,
//! sampling, the hybrid-weight sweep, and the target-variance probe.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::data::SequenceSource;
use crate::error::{CoreError, Result};
use crate::eval::{
    chain_generate, multi_step_generate, posterior_generate_batch, seq_generation_metrics_batched,
    seq_multi_step_batch, tv_distance, unconstrained_kernel_matrix, variance_probe,
    GenerationReport,
};
use crate::masking::MaskingConfig;
use crate::model::{
    load_checkpoint, seq_kernel_rows, AlphaSchedule, ExactKernelNet, PosteriorNet,
    SequenceKernelNet,
};
use crate::rng::SeedStream;
use crate::training::{
    hybrid_loss, kce_loss, kr_loss_seq, pr_loss, train_driver, write_loss_csv, StepRecord,
};

use super::config::{
    GenerateConfig, HybridSweepConfig, ObjectiveSpec, SeqEvalConfig, SeqTrainConfig, SourceSpec,
    VarianceProbeConfig, SEQ_EPSILON,
};

fn tail_mean_loss(records: &[StepRecord]) -> f64 {
    let tail = records.len().min(500);
    if tail == 0 {
        return f64::NAN;
    }
    records[records.len() - tail..].iter().map(|r| r.loss).sum::<f64>() / tail as f64
}

fn source_value(spec: &SourceSpec) -> Value {
    serde_json::to_value(spec).expect("source specs serialize")
}

/// Mean per-position TV between predicted one-step rows and the source's
/// exact marginals. `rows` may carry a trailing MASK column; the exact
/// marginals put zero mass there.
fn rows_tv(rows: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let d = truth.len();
    let mut total = 0.0;
    for (row, tr) in rows.iter().zip(truth) {
        let mut extended = tr.clone();
        extended.resize(row.len(), 0.0);
        total += tv_distance(row, &extended);
    }
    total / d as f64
}

fn write_tv_snapshots(path: &Path, rows: &[(usize, f64)]) -> Result<()> {
    let mut text = String::from("step,one_step_tv\n");
    for &(step, tv) in rows {
        writeln!(text, "{step},{tv:.17e}").expect("writing to String cannot fail");
    }
    fs::write(path, text)?;
    Ok(())
}

// ── seq-train ──────────────────────────────────────────────────────────────

pub(crate) fn run_seq_train(cfg: &SeqTrainConfig, seed: u64, dir: &Path) -> Result<Value> {
    let source = cfg.source.build()?;
    let (v, d) = (source.vocab_size(), source.seq_len());
    let mask_cfg = MaskingConfig::new(v, d)?;
    let sampler = cfg.time.build(SEQ_EPSILON)?;
    let settings =
        cfg.optim.settings(cfg.source.default_iterations(), cfg.objective.default_batch());
    let truth = source.true_marginals();
    let all_mask = vec![mask_cfg.mask_token(); d];

    let mut snapshots: Vec<(usize, f64)> = Vec::new();
    let (records, report) = match cfg.objective {
        ObjectiveSpec::Pr => {
            let mut net = PosteriorNet::new(v, d, seed)?;
            let mut rng = SeedStream::derive(seed, "train/seq/batches");
            let (eps, batch) = (sampler.epsilon, settings.batch_size);
            let records = train_driver(
                &mut net,
                &settings,
                &mut rng,
                |n, r| pr_loss(n, &source, &mask_cfg, eps, batch, r),
                |n| n.params_mut().tensors_mut(),
                |n, step| {
                    snapshots.push((step, rows_tv(&n.posterior_rows(&all_mask, 0.0), &truth)));
                    Ok(())
                },
            )?;
            net.save(&dir.join("checkpoint.dmf"))?;
            let mut eval_rng = SeedStream::derive(seed, "eval/generate");
            let report = seq_generation_metrics_batched(
                |n, r| posterior_generate_batch(&net, 1, n, r),
                &source,
                cfg.eval_samples,
                1,
                &mut eval_rng,
            )?;
            (records, report)
        }
        kernel_objective => {
            let schedule = AlphaSchedule::ratio_to_end();
            let mut net = SequenceKernelNet::new(v, d, seed)?;
            let mut rng = SeedStream::derive(seed, "train/seq/batches");
            let (batch, fd) = (settings.batch_size, settings.fd_step);
            let records = train_driver(
                &mut net,
                &settings,
                &mut rng,
                |n, r| match kernel_objective {
                    ObjectiveSpec::Kr => {
                        kr_loss_seq(n, &schedule, &source, &mask_cfg, &sampler, batch, fd, r)
                    }
                    ObjectiveSpec::Kce => {
                        kce_loss(n, &schedule, &source, &mask_cfg, &sampler, batch, r)
                    }
                    ObjectiveSpec::Hybrid(w) => {
                        hybrid_loss(n, &schedule, &source, &mask_cfg, &sampler, batch, w, fd, r)
                    }
                    ObjectiveSpec::Pr => unreachable!("handled above"),
                },
                |n| n.params_mut().tensors_mut(),
                |n, step| {
                    let rows = seq_kernel_rows(n, &schedule, &all_mask, 0.0, 1.0);
                    snapshots.push((step, rows_tv(&rows, &truth)));
                    Ok(())
                },
            )?;
            net.save(&dir.join("checkpoint.dmf"), Some(&schedule))?;
            let mut eval_rng = SeedStream::derive(seed, "eval/generate");
            let report = seq_generation_metrics_batched(
                |n, r| seq_multi_step_batch(&net, &schedule, 1, n, r),
                &source,
                cfg.eval_samples,
                1,
                &mut eval_rng,
            )?;
            (records, report)
        }
    };

    write_loss_csv(&dir.join("loss.csv"), &records)?;
    write_tv_snapshots(&dir.join("snapshots.csv"), &snapshots)?;

    Ok(json!({
        "source": source_value(&cfg.source),
        "objective": cfg.objective.label(),
        "iterations": settings.iterations,
        "batch_size": settings.batch_size,
        "tail_loss": tail_mean_loss(&records),
        "one_step_tv": report.avg_tv,
        "one_step": serde_json::to_value(&report)?,
    }))
}

// ── seq-eval ───────────────────────────────────────────────────────────────

fn check_dims(source: &SequenceSource, v: usize, d: usize) -> Result<()> {
    if v != source.vocab_size() || d != source.seq_len() {
        return Err(CoreError::Config(format!(
            "source/checkpoint: source is vocab {} × len {} but the checkpoint was trained on \
             vocab {v} × len {d}",
            source.vocab_size(),
            source.seq_len(),
        )));
    }
    Ok(())
}

pub(crate) fn run_seq_eval(cfg: &SeqEvalConfig, seed: u64, dir: &Path) -> Result<Value> {
    let source = cfg.source.build()?;
    let path = Path::new(&cfg.checkpoint);
    let (header, _) = load_checkpoint(path)?;

    let mut reports: Vec<(usize, GenerationReport)> = Vec::new();
    match header.kind.as_str() {
        "sequence-kernel" => {
            let (net, schedule) = SequenceKernelNet::load(path)?;
            let schedule = schedule.ok_or_else(|| {
                CoreError::Checkpoint("sequence-kernel checkpoint lacks its schedule".into())
            })?;
            check_dims(&source, net.vocab_size(), net.seq_len())?;
            for &s in &cfg.steps {
                let mut rng = SeedStream::derive(seed, &format!("eval/generate/{s}"));
                let report = seq_generation_metrics_batched(
                    |n, r| seq_multi_step_batch(&net, &schedule, s, n, r),
                    &source,
                    cfg.n_samples,
                    s,
                    &mut rng,
                )?;
                reports.push((s, report));
            }
        }
        "posterior" => {
            let net = PosteriorNet::load(path)?;
            check_dims(&source, net.vocab_size(), net.seq_len())?;
            for &s in &cfg.steps {
                let mut rng = SeedStream::derive(seed, &format!("eval/generate/{s}"));
                let report = seq_generation_metrics_batched(
                    |n, r| posterior_generate_batch(&net, s, n, r),
                    &source,
                    cfg.n_samples,
                    s,
                    &mut rng,
                )?;
                reports.push((s, report));
            }
        }
        other => {
            return Err(CoreError::Config(format!(
                "checkpoint: \"{other}\" is not a sequence checkpoint; use exact-eval for \
                 exact-chain models"
            )))
        }
    }

    let mut csv =
        String::from("n_steps,avg_tv,token_accuracy,cross_entropy,residual_mask_rate\n");
    for (s, rep) in &reports {
        writeln!(
            csv,
            "{s},{:.17e},{:.17e},{:.17e},{:.17e}",
            rep.avg_tv, rep.token_accuracy, rep.cross_entropy, rep.residual_mask_rate
        )
        .expect("writing to String cannot fail");
    }
    fs::write(dir.join("reports.csv"), csv)?;

    Ok(json!({
        "model": header.kind,
        "source": source_value(&cfg.source),
        "n_samples": cfg.n_samples,
        "steps": reports
            .iter()
            .map(|(s, rep)| Ok(json!({"n_steps": s, "report": serde_json::to_value(rep)?})))
            .collect::<Result<Vec<Value>>>()?,
    }))
}

// ── generate ───────────────────────────────────────────────────────────────

fn write_state_samples(dir: &Path, samples: &[usize], n_states: usize) -> Result<Vec<f64>> {
    let mut csv = String::from("sample,state\n");
    for (i, &x) in samples.iter().enumerate() {
        writeln!(csv, "{i},{x}").expect("writing to String cannot fail");
    }
    fs::write(dir.join("samples.csv"), csv)?;

    let mut counts = vec![0usize; n_states];
    for &x in samples {
        counts[x] += 1;
    }
    let freqs: Vec<f64> =
        counts.iter().map(|&c| c as f64 / samples.len() as f64).collect();
    let mut csv = String::from("state,count,frequency\n");
    for (x, (&c, f)) in counts.iter().zip(&freqs).enumerate() {
        writeln!(csv, "{x},{c},{f:.17e}").expect("writing to String cannot fail");
    }
    fs::write(dir.join("histogram.csv"), csv)?;
    Ok(freqs)
}

fn write_seq_samples(dir: &Path, samples: &[Vec<usize>], alphabet: usize) -> Result<f64> {
    let mut csv = String::from("sample,tokens\n");
    for (i, seq) in samples.iter().enumerate() {
        let tokens: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        writeln!(csv, "{i},{}", tokens.join(" ")).expect("writing to String cannot fail");
    }
    fs::write(dir.join("samples.csv"), csv)?;

    let d = samples.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; d * alphabet];
    for seq in samples {
        for (p, &t) in seq.iter().enumerate() {
            counts[p * alphabet + t] += 1;
        }
    }
    let mut csv = String::from("position,token,count,frequency\n");
    for p in 0..d {
        for t in 0..alphabet {
            let c = counts[p * alphabet + t];
            let f = c as f64 / samples.len() as f64;
            writeln!(csv, "{p},{t},{c},{f:.17e}").expect("writing to String cannot fail");
        }
    }
    fs::write(dir.join("histogram.csv"), csv)?;

    let mask = alphabet - 1;
    let masked: usize = samples.iter().flatten().filter(|&&t| t == mask).count();
    Ok(masked as f64 / (samples.len() * d.max(1)) as f64)
}

pub(crate) fn run_generate(cfg: &GenerateConfig, seed: u64, dir: &Path) -> Result<Value> {
    let path = Path::new(&cfg.checkpoint);
    let (header, _) = load_checkpoint(path)?;
    let mut rng = SeedStream::derive(seed, "eval/generate");

    match header.kind.as_str() {
        "exact-kernel" => {
            let (net, schedule) = ExactKernelNet::load(path)?;
            if cfg.x0 >= net.n_states() {
                return Err(CoreError::Config(format!(
                    "x0: {} is out of range for a {}-state model",
                    cfg.x0,
                    net.n_states()
                )));
            }
            let samples: Vec<usize> = (0..cfg.n_samples)
                .map(|_| match schedule.as_ref() {
                    Some(s) => multi_step_generate(&net, s, cfg.x0, cfg.n_steps, &mut rng),
                    None => chain_generate(
                        unconstrained_kernel_matrix(&net),
                        cfg.x0,
                        cfg.n_steps,
                        &mut rng,
                    ),
                })
                .collect::<Result<_>>()?;
            let freqs = write_state_samples(dir, &samples, net.n_states())?;
            Ok(json!({
                "model": "exact-kernel",
                "n_states": net.n_states(),
                "constrained": schedule.is_some(),
                "x0": cfg.x0,
                "n_steps": cfg.n_steps,
                "n_samples": cfg.n_samples,
                "frequencies": freqs,
            }))
        }
        "sequence-kernel" => {
            let (net, schedule) = SequenceKernelNet::load(path)?;
            let schedule = schedule.ok_or_else(|| {
                CoreError::Checkpoint("sequence-kernel checkpoint lacks its schedule".into())
            })?;
            let samples = seq_multi_step_batch(&net, &schedule, cfg.n_steps, cfg.n_samples, &mut rng)?;
            let mask_rate = write_seq_samples(dir, &samples, net.vocab_size() + 1)?;
            Ok(json!({
                "model": "sequence-kernel",
                "vocab_size": net.vocab_size(),
                "seq_len": net.seq_len(),
                "n_steps": cfg.n_steps,
                "n_samples": cfg.n_samples,
                "residual_mask_rate": mask_rate,
            }))
        }
        "posterior" => {
            let net = PosteriorNet::load(path)?;
            let samples = posterior_generate_batch(&net, cfg.n_steps, cfg.n_samples, &mut rng)?;
            let mask_rate = write_seq_samples(dir, &samples, net.vocab_size() + 1)?;
            Ok(json!({
                "model": "posterior",
                "vocab_size": net.vocab_size(),
                "seq_len": net.seq_len(),
                "n_steps": cfg.n_steps,
                "n_samples": cfg.n_samples,
                "residual_mask_rate": mask_rate,
            }))
        }
        other => Err(CoreError::Config(format!(
            "checkpoint: unrecognized model kind \"{other}\""
        ))),
    }
}

// ── variance-probe ─────────────────────────────────────────────────────────

pub(crate) fn run_variance_probe(
    cfg: &VarianceProbeConfig,
    seed: u64,
    dir: &Path,
) -> Result<Value> {
    let report = variance_probe(cfg.vocab_size, cfg.seq_len, &cfg.t_grid, cfg.n_samples, seed)?;

    let mut csv = String::from("t,kr_variance,pr_variance,kr_target_l2\n");
    for (i, &t) in report.t_grid.iter().enumerate() {
        writeln!(
            csv,
            "{t},{:.17e},{:.17e},{:.17e}",
            report.kr_variance[i], report.pr_variance[i], report.kr_target_l2[i]
        )
        .expect("writing to String cannot fail");
    }
    fs::write(dir.join("variance.csv"), csv)?;

    let last = report.t_grid.len() - 1;
    let kr_over_pr_at_last = report.kr_variance[last] / report.pr_variance[last];
    let pr_max = report.pr_variance.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pr_min = report.pr_variance.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut v = serde_json::to_value(&report)?;
    let obj = v.as_object_mut().expect("report serializes to an object");
    obj.insert("vocab_size".into(), json!(cfg.vocab_size));
    obj.insert("seq_len".into(), json!(cfg.seq_len));
    obj.insert("n_samples".into(), json!(cfg.n_samples));
    obj.insert("kr_over_pr_at_last".into(), json!(kr_over_pr_at_last));
    obj.insert("pr_max_over_min".into(), json!(pr_max / pr_min));
    Ok(v)
}

// ── hybrid-sweep ───────────────────────────────────────────────────────────

pub(crate) fn run_hybrid_sweep(cfg: &HybridSweepConfig, _seed: u64, dir: &Path) -> Result<Value> {
    let source = cfg.source.build()?;
    let (v, d) = (source.vocab_size(), source.seq_len());
    let mask_cfg = MaskingConfig::new(v, d)?;
    let sampler = cfg.time.build(SEQ_EPSILON)?;
    let settings = cfg.optim.settings(cfg.source.default_iterations(), 256);
    let schedule = AlphaSchedule::ratio_to_end();

    let mut rows: Vec<(String, u64, GenerationReport)> = Vec::new();
    let mut csv = String::from("lambda,seed,avg_tv,token_accuracy\n");
    for &lambda in &cfg.lambdas {
        for &seed in &cfg.seeds {
            let mut net = SequenceKernelNet::new(v, d, seed)?;
            let mut rng = SeedStream::derive(seed, "train/seq/batches");
            let (batch, fd) = (settings.batch_size, settings.fd_step);
            train_driver(
                &mut net,
                &settings,
                &mut rng,
                |n, r| hybrid_loss(n, &schedule, &source, &mask_cfg, &sampler, batch, lambda, fd, r),
                |n| n.params_mut().tensors_mut(),
                |_, _| Ok(()),
            )?;
            let mut eval_rng = SeedStream::derive(seed, "eval/generate");
            let report = seq_generation_metrics_batched(
                |n, r| seq_multi_step_batch(&net, &schedule, 1, n, r),
                &source,
                cfg.eval_samples,
                1,
                &mut eval_rng,
            )?;
            writeln!(
                csv,
                "{},{seed},{:.17e},{:.17e}",
                lambda.label(),
                report.avg_tv,
                report.token_accuracy
            )
            .expect("writing to String cannot fail");
            rows.push((lambda.label(), seed, report));
        }
    }
    fs::write(dir.join("sweep.csv"), csv)?;

    let per_lambda: Vec<Value> = cfg
        .lambdas
        .iter()
        .map(|lambda| {
            let label = lambda.label();
            let tvs: Vec<f64> = rows
                .iter()
                .filter(|(l, _, _)| *l == label)
                .map(|(_, _, rep)| rep.avg_tv)
                .collect();
            let mean = tvs.iter().sum::<f64>() / tvs.len() as f64;
            json!({
                "lambda": label,
                "mean_tv": mean,
                "runs": rows
                    .iter()
                    .filter(|(l, _, _)| *l == label)
                    .map(|(_, seed, rep)| json!({
                        "seed": seed,
                        "avg_tv": rep.avg_tv,
                        "token_accuracy": rep.token_accuracy,
                    }))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();

    let best_lambda = per_lambda
        .iter()
        .min_by(|a, b| {
            let (x, y) = (a["mean_tv"].as_f64().unwrap(), b["mean_tv"].as_f64().unwrap());
            x.partial_cmp(&y).expect("mean TVs are finite")
        })
        .map(|row| row["lambda"].clone())
        .unwrap_or(Value::Null);

    Ok(json!({
        "source": source_value(&cfg.source),
        "iterations": settings.iterations,
        "eval_samples": cfg.eval_samples,
        "per_lambda": per_lambda,
        "best_lambda": best_lambda,
    }))
}
