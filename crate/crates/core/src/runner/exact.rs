//! Executors for the exact-chain experiments: training, checkpoint grading,
//! oracle verification, and the three design ablations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::ctmc::{kernel_between, ChainKind, Generator, ReferenceProcess};
use crate::error::{CoreError, Result};
use crate::eval::{
    boundary_ablation_report, kernel_ablation_metrics, kernel_error_grid, model_kernel_matrix,
    multi_step_empirical, tv_distance, unconstrained_kernel_matrix, write_grid_csv,
    write_kernel_heatmap_csv, KernelErrorGrid,
};
use crate::model::{AlphaSchedule, ExactKernelNet};
use crate::rng::SeedStream;
use crate::training::{
    boundary_penalty_loss, kr_loss_exact, train_driver, write_loss_csv, StepRecord, TimeSampler,
    TimeSamplerKind, TrainSettings,
};

use super::config::{
    exact_iterations_for, AblateBoundaryConfig, AblateRatioConfig, AblateSamplerConfig,
    ExactEvalConfig, ExactTrainConfig, VerifyOracleConfig, EXACT_EPSILON,
};

/// Stable chain name for metrics keys and file names.
pub(crate) fn chain_label(kind: &ChainKind) -> String {
    match kind {
        ChainKind::TwoState { .. } => "two-state".into(),
        ChainKind::Ring { n, .. } => format!("ring-{n}"),
        ChainKind::BirthDeath { n, .. } => format!("birth-death-{n}"),
    }
}

/// Stable sampler name for metrics keys and file names.
pub(crate) fn sampler_label(kind: &TimeSamplerKind) -> String {
    match kind {
        TimeSamplerKind::Uniform => "uniform".into(),
        TimeSamplerKind::LogitNormal { mu } => format!("logit-normal({mu})"),
    }
}

fn tail_mean_loss(records: &[StepRecord]) -> f64 {
    let tail = records.len().min(500);
    if tail == 0 {
        return f64::NAN;
    }
    records[records.len() - tail..].iter().map(|r| r.loss).sum::<f64>() / tail as f64
}

fn error_grid_of(
    net: &ExactKernelNet,
    schedule: Option<&AlphaSchedule>,
    q: &Generator,
    grid_n: usize,
) -> Result<KernelErrorGrid> {
    match schedule {
        Some(s) => kernel_error_grid(model_kernel_matrix(net, s), q, grid_n),
        None => kernel_error_grid(unconstrained_kernel_matrix(net), q, grid_n),
    }
}

/// One trained exact-kernel model plus its loss history.
pub(crate) struct ExactRun {
    pub net: ExactKernelNet,
    pub schedule: AlphaSchedule,
    pub records: Vec<StepRecord>,
}

/// Train one exact model from scratch. `penalty` switches to the
/// unconstrained-softmax baseline with that boundary-penalty weight; the
/// returned schedule is only meaningful for the mixture construction.
pub(crate) fn train_exact(
    process: &ReferenceProcess,
    penalty: Option<f64>,
    sampler: &TimeSampler,
    settings: &TrainSettings,
    seed: u64,
    on_snapshot: impl FnMut(&ExactKernelNet, usize) -> Result<()>,
) -> Result<ExactRun> {
    let schedule = AlphaSchedule::exponential_for(&process.generator);
    let mut net = ExactKernelNet::new(process.n_states(), seed)?;
    let mut rng = SeedStream::derive(seed, "train/exact/batches");
    let (batch, fd) = (settings.batch_size, settings.fd_step);
    let records = train_driver(
        &mut net,
        settings,
        &mut rng,
        |n, r| {
            Ok(match penalty {
                Some(lambda) => boundary_penalty_loss(n, process, sampler, batch, lambda, fd, r),
                None => kr_loss_exact(n, &schedule, process, sampler, batch, fd, r),
            })
        },
        |n| n.params_mut().tensors_mut(),
        on_snapshot,
    )?;
    Ok(ExactRun { net, schedule, records })
}

fn write_snapshot_csv(path: &Path, rows: &[(usize, f64, f64, f64)]) -> Result<()> {
    let mut text = String::from("step,max_err,mean_err,col_tv\n");
    for &(step, max_err, mean_err, col_tv) in rows {
        writeln!(text, "{step},{max_err:.17e},{mean_err:.17e},{col_tv:.17e}")
            .expect("writing to String cannot fail");
    }
    fs::write(path, text)?;
    Ok(())
}

// ── exact-train ────────────────────────────────────────────────────────────

pub(crate) fn run_exact_train(cfg: &ExactTrainConfig, seed: u64, dir: &Path) -> Result<Value> {
    let process = ReferenceProcess::new(cfg.chain.clone())?;
    let sampler = cfg.time.build(EXACT_EPSILON)?;
    let settings = cfg.optim.settings(exact_iterations_for(&cfg.chain), 256);

    // Mid-training error snapshots use a coarser grid to keep them cheap.
    let snap_n = cfg.grid_n.min(10);
    let mut snapshots: Vec<(usize, f64, f64, f64)> = Vec::new();
    let snapshot_schedule = AlphaSchedule::exponential_for(&process.generator);
    let run = train_exact(&process, cfg.boundary_penalty, &sampler, &settings, seed, |n, step| {
        let sched = cfg.boundary_penalty.is_none().then_some(&snapshot_schedule);
        let g = error_grid_of(n, sched, &process.generator, snap_n)?;
        snapshots.push((step, g.max_error, g.mean_error, g.mean_col_tv));
        Ok(())
    })?;

    write_loss_csv(&dir.join("loss.csv"), &run.records)?;
    write_snapshot_csv(&dir.join("snapshots.csv"), &snapshots)?;

    let schedule = cfg.boundary_penalty.is_none().then_some(&run.schedule);
    let grid = error_grid_of(&run.net, schedule, &process.generator, cfg.grid_n)?;
    write_grid_csv(&grid, &dir.join("error_grid.csv"))?;
    run.net.save(&dir.join("checkpoint.dmf"), schedule)?;

    Ok(json!({
        "chain": chain_label(&cfg.chain),
        "objective": match cfg.boundary_penalty {
            Some(_) => "boundary-penalty",
            None => "kr",
        },
        "lambda_bdy": cfg.boundary_penalty,
        "iterations": settings.iterations,
        "batch_size": settings.batch_size,
        "tail_loss": tail_mean_loss(&run.records),
        "grid_max_err": grid.max_error,
        "grid_mean_err": grid.mean_error,
        "grid_mean_col_tv": grid.mean_col_tv,
    }))
}

// ── exact-eval ─────────────────────────────────────────────────────────────

pub(crate) fn run_exact_eval(cfg: &ExactEvalConfig, seed: u64, dir: &Path) -> Result<Value> {
    let process = ReferenceProcess::new(cfg.chain.clone())?;
    let q = &process.generator;
    let (net, schedule) = ExactKernelNet::load(Path::new(&cfg.checkpoint))?;
    if net.n_states() != q.n_states() {
        return Err(CoreError::Config(format!(
            "chain/checkpoint: chain has {} states but the checkpoint was trained on {}",
            q.n_states(),
            net.n_states()
        )));
    }

    let grid = error_grid_of(&net, schedule.as_ref(), q, cfg.grid_n)?;
    write_grid_csv(&grid, &dir.join("error_grid.csv"))?;
    if cfg.heatmap {
        match schedule.as_ref() {
            Some(s) => write_kernel_heatmap_csv(
                model_kernel_matrix(&net, s),
                q,
                cfg.grid_n,
                &dir.join("heatmap.csv"),
            )?,
            None => write_kernel_heatmap_csv(
                unconstrained_kernel_matrix(&net),
                q,
                cfg.grid_n,
                &dir.join("heatmap.csv"),
            )?,
        }
    }

    // One-step generation check: empirical draws from the learned full-span
    // kernel against the exact column, per start state.
    let mut one_step_tv = Vec::new();
    if cfg.gen_samples > 0 {
        let mut rng = SeedStream::derive(seed, "eval/generate");
        let truth = kernel_between(q, 0.0, 1.0)?;
        let mut csv = String::from("x0,tv\n");
        for x0 in 0..q.n_states() {
            let emp = match schedule.as_ref() {
                Some(s) => multi_step_empirical(
                    model_kernel_matrix(&net, s),
                    x0,
                    1,
                    cfg.gen_samples,
                    &mut rng,
                )?,
                None => multi_step_empirical(
                    unconstrained_kernel_matrix(&net),
                    x0,
                    1,
                    cfg.gen_samples,
                    &mut rng,
                )?,
            };
            let tv = tv_distance(&emp, &truth.column(x0));
            writeln!(csv, "{x0},{tv:.17e}").expect("writing to String cannot fail");
            one_step_tv.push(tv);
        }
        fs::write(dir.join("gen_tv.csv"), csv)?;
    }

    let max_tv = one_step_tv.iter().cloned().fold(f64::NAN, f64::max);
    Ok(json!({
        "chain": chain_label(&cfg.chain),
        "constrained": schedule.is_some(),
        "grid_max_err": grid.max_error,
        "grid_mean_err": grid.mean_error,
        "grid_mean_col_tv": grid.mean_col_tv,
        "gen_samples": cfg.gen_samples,
        "one_step_tv": one_step_tv,
        "max_one_step_tv": if max_tv.is_nan() { Value::Null } else { json!(max_tv) },
    }))
}

// ── verify-oracle ──────────────────────────────────────────────────────────

struct OracleReport {
    label: String,
    generator_col_sum: f64,
    kernel_col_sum: f64,
    kernel_min_entry: f64,
    semigroup: f64,
    forward_eq: f64,
    identity: f64,
    integral: f64,
}

fn verify_one_chain(q: &Generator, cfg: &VerifyOracleConfig, label: String) -> OracleReport {
    let n = q.n_states();
    let g = cfg.grid_n;
    let h = cfg.fe_h;

    let mut generator_col_sum: f64 = 0.0;
    for x in 0..n {
        let sum: f64 = (0..n).map(|y| q.rate(y, x)).sum();
        generator_col_sum = generator_col_sum.max(sum.abs());
    }

    let mut kernel_col_sum: f64 = 0.0;
    let mut kernel_min_entry = f64::INFINITY;
    let mut semigroup: f64 = 0.0;
    let mut forward_eq: f64 = 0.0;
    let mut identity: f64 = 0.0;
    let mut integral: f64 = 0.0;

    // r sweeps [0, 1) and t sweeps (r, 1 − h]; the cap keeps the centered
    // differences of the identity check inside the unit interval.
    for i in 0..g {
        let r = i as f64 / g as f64;
        for j in 0..g {
            let t = r + (1.0 - h - r) * (j + 1) as f64 / g as f64;
            let k_rt = kernel_between(q, r, t).expect("grid times are valid");
            for x in 0..n {
                let col = k_rt.column(x);
                kernel_col_sum = kernel_col_sum.max((col.iter().sum::<f64>() - 1.0).abs());
                kernel_min_entry = col.iter().fold(kernel_min_entry, |m, &p| m.min(p));
            }

            // Two-hop composition through the midpoint must reproduce K(r,t).
            let s = 0.5 * (r + t);
            let k_rs = kernel_between(q, r, s).expect("grid times are valid");
            let k_st = kernel_between(q, s, t).expect("grid times are valid");
            for x in 0..n {
                let col_rs = k_rs.column(x);
                let mut hat = vec![0.0; n];
                for (z, &w) in col_rs.iter().enumerate() {
                    let col_z = k_st.column(z);
                    for y in 0..n {
                        hat[y] += col_z[y] * w;
                    }
                }
                let col_rt = k_rt.column(x);
                for y in 0..n {
                    semigroup = semigroup.max((hat[y] - col_rt[y]).abs());
                }
            }

            forward_eq = forward_eq.max(crate::ctmc::forward_equation_residual(q, r, t, h));
            identity = identity.max(crate::ctmc::verify_dmf_identity(q, r, t, h));
            integral = integral.max(crate::ctmc::verify_integral_form(q, r, t, cfg.quad_panels));
        }
    }

    OracleReport {
        label,
        generator_col_sum,
        kernel_col_sum,
        kernel_min_entry,
        semigroup,
        forward_eq,
        identity,
        integral,
    }
}

pub(crate) fn run_verify_oracle(cfg: &VerifyOracleConfig, _seed: u64, dir: &Path) -> Result<Value> {
    let mut rows = Vec::new();
    let mut csv = String::from(
        "chain,generator_col_sum,kernel_col_sum,kernel_min_entry,semigroup,forward_eq,identity,integral,pass\n",
    );
    let mut all_pass = true;
    for kind in &cfg.chains {
        let q = kind.build()?;
        let rep = verify_one_chain(&q, cfg, chain_label(kind));
        let pass = rep.generator_col_sum <= cfg.tol_column_sum
            && rep.kernel_col_sum <= cfg.tol_column_sum
            && rep.kernel_min_entry >= 0.0
            && rep.semigroup <= cfg.tol_semigroup
            && rep.forward_eq <= cfg.tol_forward_eq
            && rep.identity <= cfg.tol_identity
            && rep.integral <= cfg.tol_integral;
        all_pass &= pass;
        writeln!(
            csv,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            rep.label,
            rep.generator_col_sum,
            rep.kernel_col_sum,
            rep.kernel_min_entry,
            rep.semigroup,
            rep.forward_eq,
            rep.identity,
            rep.integral,
            pass
        )
        .expect("writing to String cannot fail");
        rows.push(json!({
            "chain": rep.label,
            "generator_col_sum": rep.generator_col_sum,
            "kernel_col_sum": rep.kernel_col_sum,
            "kernel_min_entry": rep.kernel_min_entry,
            "semigroup": rep.semigroup,
            "forward_eq": rep.forward_eq,
            "identity": rep.identity,
            "integral": rep.integral,
            "pass": pass,
        }));
    }
    fs::write(dir.join("oracle_report.csv"), csv)?;
    Ok(json!({
        "grid_n": cfg.grid_n,
        "fe_h": cfg.fe_h,
        "quad_panels": cfg.quad_panels,
        "chains": rows,
        "pass": all_pass,
    }))
}

// ── ablate-boundary ────────────────────────────────────────────────────────

pub(crate) fn run_ablate_boundary(
    cfg: &AblateBoundaryConfig,
    _seed: u64,
    dir: &Path,
) -> Result<Value> {
    let process = ReferenceProcess::new(cfg.chain.clone())?;
    let q = &process.generator;
    let sampler = cfg.time.build(EXACT_EPSILON)?;
    let settings = cfg.optim.settings(exact_iterations_for(&cfg.chain), 256);

    let mut rows = Vec::new();
    let mut csv = String::from("seed,model,max_err,mean_err,col_tv,gen_tv\n");
    for &seed in &cfg.seeds {
        let cons = train_exact(&process, None, &sampler, &settings, seed, |_, _| Ok(()))?;
        write_loss_csv(&dir.join(format!("loss-construction-{seed}.csv")), &cons.records)?;
        cons.net
            .save(&dir.join(format!("checkpoint-construction-{seed}.dmf")), Some(&cons.schedule))?;
        let mut rng_c = SeedStream::derive(seed, "eval/ablation/construction");
        let m_c = kernel_ablation_metrics(
            model_kernel_matrix(&cons.net, &cons.schedule),
            q,
            cfg.grid_n,
            cfg.gen_samples,
            &mut rng_c,
        )?;

        let pen =
            train_exact(&process, Some(cfg.lambda_bdy), &sampler, &settings, seed, |_, _| Ok(()))?;
        write_loss_csv(&dir.join(format!("loss-penalty-{seed}.csv")), &pen.records)?;
        pen.net.save(&dir.join(format!("checkpoint-penalty-{seed}.dmf")), None)?;
        let mut rng_p = SeedStream::derive(seed, "eval/ablation/penalty");
        let m_p = kernel_ablation_metrics(
            unconstrained_kernel_matrix(&pen.net),
            q,
            cfg.grid_n,
            cfg.gen_samples,
            &mut rng_p,
        )?;

        for (name, m) in [("construction", &m_c), ("penalty", &m_p)] {
            writeln!(
                csv,
                "{seed},{name},{:.17e},{:.17e},{:.17e},{:.17e}",
                m.max_err, m.mean_err, m.col_tv, m.gen_tv
            )
            .expect("writing to String cannot fail");
        }
        rows.push((seed, m_c, m_p));
    }
    fs::write(dir.join("ablation.csv"), csv)?;

    let report = boundary_ablation_report(&rows);
    Ok(json!({
        "chain": chain_label(&cfg.chain),
        "lambda_bdy": cfg.lambda_bdy,
        "iterations": settings.iterations,
        "report": report,
    }))
}

// ── ablate-ratio / ablate-sampler ──────────────────────────────────────────

/// Train one KR model per (setting, seed) pair and grade each on the error
/// grid; rows come back as (setting label, seed, grid).
fn sweep_exact_kr(
    process: &ReferenceProcess,
    settings: &TrainSettings,
    grid_n: usize,
    cases: &[(String, TimeSampler)],
    seeds: &[u64],
) -> Result<Vec<(String, u64, KernelErrorGrid)>> {
    let mut rows = Vec::new();
    for (label, sampler) in cases {
        for &seed in seeds {
            let run = train_exact(process, None, sampler, settings, seed, |_, _| Ok(()))?;
            let grid =
                error_grid_of(&run.net, Some(&run.schedule), &process.generator, grid_n)?;
            rows.push((label.clone(), seed, grid));
        }
    }
    Ok(rows)
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn sweep_summary(rows: &[(String, u64, KernelErrorGrid)], order: &[String]) -> Vec<Value> {
    order
        .iter()
        .map(|label| {
            let runs: Vec<&(String, u64, KernelErrorGrid)> =
                rows.iter().filter(|(l, _, _)| l == label).collect();
            let tvs: Vec<f64> = runs.iter().map(|(_, _, g)| g.mean_col_tv).collect();
            let (mean, std) = mean_and_std(&tvs);
            json!({
                "setting": label,
                "mean_col_tv": mean,
                "std_col_tv": std,
                "runs": runs.iter().map(|(_, seed, g)| json!({
                    "seed": seed,
                    "mean_col_tv": g.mean_col_tv,
                    "max_err": g.max_error,
                })).collect::<Vec<_>>(),
            })
        })
        .collect()
}

fn write_sweep_csv(dir: &Path, rows: &[(String, u64, KernelErrorGrid)]) -> Result<()> {
    let mut csv = String::from("setting,seed,mean_col_tv,max_err,mean_err\n");
    for (label, seed, g) in rows {
        writeln!(
            csv,
            "{label},{seed},{:.17e},{:.17e},{:.17e}",
            g.mean_col_tv, g.max_error, g.mean_error
        )
        .expect("writing to String cannot fail");
    }
    fs::write(dir.join("sweep.csv"), csv)?;
    Ok(())
}

pub(crate) fn run_ablate_ratio(cfg: &AblateRatioConfig, _seed: u64, dir: &Path) -> Result<Value> {
    let process = ReferenceProcess::new(cfg.chain.clone())?;
    let settings = cfg.optim.settings(exact_iterations_for(&cfg.chain), 256);
    let eps = cfg.epsilon.unwrap_or(EXACT_EPSILON);

    let cases: Vec<(String, TimeSampler)> = cfg
        .ratios
        .iter()
        .map(|&ratio| Ok((format!("{ratio}"), TimeSampler::new(cfg.sampler, eps, ratio)?)))
        .collect::<Result<_>>()?;
    let order: Vec<String> = cases.iter().map(|(l, _)| l.clone()).collect();
    let rows = sweep_exact_kr(&process, &settings, cfg.grid_n, &cases, &cfg.seeds)?;
    write_sweep_csv(dir, &rows)?;

    let summary = sweep_summary(&rows, &order);
    // Headline comparison: how much worse boundary-pair-only training
    // (ratio 0) is than all-wide-interval training (ratio 1).
    let tv_of = |target: f64| {
        summary
            .iter()
            .find(|row| row["setting"] == format!("{target}"))
            .and_then(|row| row["mean_col_tv"].as_f64())
    };
    let multiple = match (tv_of(0.0), tv_of(1.0)) {
        (Some(a), Some(b)) if b > 0.0 => json!(a / b),
        _ => Value::Null,
    };
    Ok(json!({
        "chain": chain_label(&cfg.chain),
        "iterations": settings.iterations,
        "epsilon": eps,
        "per_ratio": summary,
        "ratio0_over_ratio1": multiple,
    }))
}

pub(crate) fn run_ablate_sampler(
    cfg: &AblateSamplerConfig,
    _seed: u64,
    dir: &Path,
) -> Result<Value> {
    let process = ReferenceProcess::new(cfg.chain.clone())?;
    let settings = cfg.optim.settings(exact_iterations_for(&cfg.chain), 256);
    let eps = cfg.epsilon.unwrap_or(EXACT_EPSILON);

    let cases: Vec<(String, TimeSampler)> = cfg
        .samplers
        .iter()
        .map(|&kind| Ok((sampler_label(&kind), TimeSampler::new(kind, eps, cfg.rt_ratio)?)))
        .collect::<Result<_>>()?;
    let order: Vec<String> = cases.iter().map(|(l, _)| l.clone()).collect();
    let rows = sweep_exact_kr(&process, &settings, cfg.grid_n, &cases, &cfg.seeds)?;
    write_sweep_csv(dir, &rows)?;

    let summary = sweep_summary(&rows, &order);
    let spread = {
        let means: Vec<f64> =
            summary.iter().filter_map(|row| row["mean_col_tv"].as_f64()).collect();
        let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        json!({"min": lo, "max": hi})
    };
    Ok(json!({
        "chain": chain_label(&cfg.chain),
        "iterations": settings.iterations,
        "epsilon": eps,
        "rt_ratio": cfg.rt_ratio,
        "per_sampler": summary,
        "mean_col_tv_spread": spread,
    }))
}
