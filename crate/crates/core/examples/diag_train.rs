// temporary diagnostic: full-budget grid error for each reference chain.
use dmf_core::ctmc::{kernel_between, ChainKind, ReferenceProcess};
use dmf_core::model::{kernel_column, AlphaSchedule, ExactKernelNet};
use dmf_core::rng::SeedStream;
use dmf_core::training::{kr_loss_exact, train_driver, TimeSampler, TrainSettings, FD_STEP};
use std::time::Instant;

fn grid_error(n: &ExactKernelNet, process: &ReferenceProcess, schedule: &AlphaSchedule) -> f64 {
    let s = process.n_states();
    let pts: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
    let mut worst: f64 = 0.0;
    for &r in &pts {
        for &t in &pts {
            if t < r {
                continue;
            }
            let oracle = kernel_between(&process.generator, r, t).unwrap();
            for x in 0..s {
                let col = kernel_column(n, schedule, x, r, t);
                for y in 0..s {
                    worst = worst.max((col[y] - oracle.prob(y, x)).abs());
                }
            }
        }
    }
    worst
}

fn run(label: &str, kind: ChainKind, iters: usize, target: f64) {
    let process = ReferenceProcess::new(kind).unwrap();
    let schedule = AlphaSchedule::exponential_for(&process.generator);
    let sampler = TimeSampler::uniform(0.01).unwrap();
    let s = process.n_states();
    let mut net = ExactKernelNet::new(s, 42).unwrap();
    let mut rng = SeedStream::derive(42, "train/exact/batches");
    let settings = TrainSettings {
        iterations: iters,
        batch_size: 256,
        lr: 3e-4,
        weight_decay: 1e-5,
        clip_norm: 1.0,
        lr_floor: 0.01,
        fd_step: FD_STEP,
        snapshot_every: 1000000,
    };
    let before = grid_error(&net, &process, &schedule);
    let start = Instant::now();
    let recs = train_driver(
        &mut net,
        &settings,
        &mut rng,
        |n, r| Ok(kr_loss_exact(n, &schedule, &process, &sampler, 256, FD_STEP, r)),
        |n| n.params_mut().tensors_mut(),
        |_, _| Ok(()),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let after = grid_error(&net, &process, &schedule);
    let tail: f64 = recs[iters - 500..].iter().map(|r| r.loss).sum::<f64>() / 500.0;
    let verdict = if after <= target { "PASS" } else { "FAIL" };
    println!(
        "{label}: {iters} iters, tail loss {tail:.4}, grid {before:.2e} -> {after:.2e} (target {target:.0e}) {verdict}  ({secs:.0}s)"
    );
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "two-state" => run("two-state", ChainKind::TwoState { lambda: 2.0 }, 15000, 1e-3),
        "ring" => run(
            "ring",
            ChainKind::Ring { n: 3, lambda_f: 2.0, lambda_b: 1.0 },
            20000,
            2e-2,
        ),
        "birth-death" => run(
            "birth-death",
            ChainKind::BirthDeath { n: 10, birth: 1.5, death: 1.0 },
            30000,
            3e-2,
        ),
        other => eprintln!("unknown chain {other:?}"),
    }
}
