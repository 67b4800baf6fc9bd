//! One-step and multi-step generation for exact chains and sequences.
//!
//! Multi-step schedules partition [0,1] into equal intervals (the minimal
//! assumption; recorded in run manifests). The chain samplers work through a
//! kernel-matrix closure so the oracle kernel can stand in for a model — the
//! calibration path that separates model error from sampling error.

use crate::ctmc::{kernel_between, Generator};
use crate::error::{CoreError, Result};
use crate::model::{
    kernel_column, seq_kernel_rows, seq_kernel_rows_batch, AlphaSchedule, ExactKernelNet,
    PosteriorNet, SequenceKernelNet,
};
use crate::rng::SeedStream;

/// Chains per forward when advancing a population, bounding tape memory.
const FORWARD_CHUNK: usize = 256;

// ── Exact-chain generation ────────────────────────────────────────────────

/// Oracle kernel as a column matrix closure — same shape as
/// `model_kernel_matrix`, for calibration runs.
pub fn oracle_kernel_matrix(q: &Generator) -> impl FnMut(f64, f64) -> Vec<Vec<f64>> + '_ {
    let s = q.n_states();
    move |r, t| {
        let k = kernel_between(q, r, t).expect("oracle kernel on a valid interval");
        (0..s).map(|x| k.column(x)).collect()
    }
}

/// Walk one trajectory: draw x_{t_{i+1}} ~ columns(t_i, t_{i+1})[x_{t_i}]
/// over `n_steps` equal intervals covering [0,1]. Returns the final state.
pub fn chain_generate(
    mut matrix: impl FnMut(f64, f64) -> Vec<Vec<f64>>,
    x0: usize,
    n_steps: usize,
    rng: &mut SeedStream,
) -> Result<usize> {
    if n_steps == 0 {
        return Err(CoreError::invalid("chain_generate: n_steps must be ≥ 1"));
    }
    let mut x = x0;
    for i in 0..n_steps {
        let (t0, t1) = (i as f64 / n_steps as f64, (i + 1) as f64 / n_steps as f64);
        let cols = matrix(t0, t1);
        x = rng.categorical(&cols[x]);
    }
    Ok(x)
}

/// One forward evaluation of K_θ(·, x0, 0, 1) and one categorical draw.
pub fn one_step_generate(
    net: &ExactKernelNet,
    schedule: &AlphaSchedule,
    x0: usize,
    rng: &mut SeedStream,
) -> usize {
    let col = kernel_column(net, schedule, x0, 0.0, 1.0);
    rng.categorical(&col)
}

/// Sequential draws through the learned kernel over equal intervals.
pub fn multi_step_generate(
    net: &ExactKernelNet,
    schedule: &AlphaSchedule,
    x0: usize,
    n_steps: usize,
    rng: &mut SeedStream,
) -> Result<usize> {
    if n_steps == 0 {
        return Err(CoreError::invalid("multi_step_generate: n_steps must be ≥ 1"));
    }
    let mut x = x0;
    for i in 0..n_steps {
        let (t0, t1) = (i as f64 / n_steps as f64, (i + 1) as f64 / n_steps as f64);
        let col = kernel_column(net, schedule, x, t0, t1);
        x = rng.categorical(&col);
    }
    Ok(x)
}

/// Empirical end-state distribution of `n_samples` trajectories from x0.
/// Kernel columns are evaluated once per interval, so each trajectory costs
/// `n_steps` categorical draws.
pub fn multi_step_empirical(
    mut matrix: impl FnMut(f64, f64) -> Vec<Vec<f64>>,
    x0: usize,
    n_steps: usize,
    n_samples: usize,
    rng: &mut SeedStream,
) -> Result<Vec<f64>> {
    if n_steps == 0 || n_samples == 0 {
        return Err(CoreError::invalid("multi_step_empirical: need n_steps ≥ 1 and n_samples ≥ 1"));
    }
    let per_step: Vec<Vec<Vec<f64>>> = (0..n_steps)
        .map(|i| matrix(i as f64 / n_steps as f64, (i + 1) as f64 / n_steps as f64))
        .collect();
    let s = per_step[0].len();
    let mut counts = vec![0usize; s];
    for _ in 0..n_samples {
        let mut x = x0;
        for cols in &per_step {
            x = rng.categorical(&cols[x]);
        }
        counts[x] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / n_samples as f64).collect())
}

// ── Sequence generation ───────────────────────────────────────────────────

/// One-step sequence generation: start fully masked, evaluate the factorized
/// kernel over (0, 1), draw every position independently.
pub fn seq_one_step_generate(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    rng: &mut SeedStream,
) -> Vec<usize> {
    seq_multi_step_generate(net, schedule, 1, rng).expect("n_steps = 1 is valid")
}

/// Multi-step sequence generation over equal intervals; each step draws all
/// positions from the factorized kernel conditioned on the current sequence.
pub fn seq_multi_step_generate(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    n_steps: usize,
    rng: &mut SeedStream,
) -> Result<Vec<usize>> {
    if n_steps == 0 {
        return Err(CoreError::invalid("seq_multi_step_generate: n_steps must be ≥ 1"));
    }
    let mask = net.mask_token();
    let mut x = vec![mask; net.seq_len()];
    for i in 0..n_steps {
        let (t0, t1) = (i as f64 / n_steps as f64, (i + 1) as f64 / n_steps as f64);
        let rows = seq_kernel_rows(net, schedule, &x, t0, t1);
        for (pos, row) in rows.iter().enumerate() {
            x[pos] = rng.categorical(row);
        }
    }
    Ok(x)
}

/// Population version of [`seq_multi_step_generate`]: `n_samples` chains
/// advanced together, one batched forward per (interval, chunk of chains)
/// instead of one forward per trajectory. Categorical draws happen in
/// (interval, chain, position) order; for a single interval that is the same
/// order as looping [`seq_one_step_generate`], so the two agree bit for bit.
/// The first interval sees every chain in the identical all-MASK state and
/// costs one forward regardless of population size.
pub fn seq_multi_step_batch(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    n_steps: usize,
    n_samples: usize,
    rng: &mut SeedStream,
) -> Result<Vec<Vec<usize>>> {
    if n_steps == 0 || n_samples == 0 {
        return Err(CoreError::invalid("seq_multi_step_batch: need n_steps ≥ 1 and n_samples ≥ 1"));
    }
    let d = net.seq_len();
    let width = net.vocab_size() + 1;
    let mut chains = vec![vec![net.mask_token(); d]; n_samples];
    for i in 0..n_steps {
        let (t0, t1) = (i as f64 / n_steps as f64, (i + 1) as f64 / n_steps as f64);
        if i == 0 {
            let rows = seq_kernel_rows(net, schedule, &chains[0], t0, t1);
            for x in &mut chains {
                for (pos, row) in rows.iter().enumerate() {
                    x[pos] = rng.categorical(row);
                }
            }
            continue;
        }
        let flat = population_rows(&chains, |ids, b| {
            seq_kernel_rows_batch(net, schedule, ids, b, t0, t1)
        });
        for (s, x) in chains.iter_mut().enumerate() {
            for pos in 0..d {
                let at = (s * d + pos) * width;
                x[pos] = rng.categorical(&flat[at..at + width]);
            }
        }
    }
    Ok(chains)
}

/// Population version of [`posterior_generate`] with the same unmasking
/// schedule and the same per-trajectory draw pattern, in (interval, chain,
/// position) order. Fully unmasked chains stop consuming draws, matching the
/// per-trajectory sampler's early exit, and stop being forwarded.
pub fn posterior_generate_batch(
    net: &PosteriorNet,
    n_steps: usize,
    n_samples: usize,
    rng: &mut SeedStream,
) -> Result<Vec<Vec<usize>>> {
    if n_steps == 0 || n_samples == 0 {
        return Err(CoreError::invalid(
            "posterior_generate_batch: need n_steps ≥ 1 and n_samples ≥ 1",
        ));
    }
    let d = net.seq_len();
    let v = net.vocab_size();
    let width = v + 1;
    let mask = net.mask_token();
    let mut chains = vec![vec![mask; d]; n_samples];
    for i in 0..n_steps {
        let (t0, t1) = (i as f64 / n_steps as f64, (i + 1) as f64 / n_steps as f64);
        let last = i + 1 == n_steps;
        let p_unmask = (t1 - t0) / (1.0 - t0);
        let active: Vec<usize> =
            (0..n_samples).filter(|&s| chains[s].contains(&mask)).collect();
        if active.is_empty() {
            break;
        }
        let flat = if i == 0 {
            net.posterior_rows_batch(&chains[0], 1, t0)
        } else {
            let still: Vec<Vec<usize>> = active.iter().map(|&s| chains[s].clone()).collect();
            population_rows(&still, |ids, b| net.posterior_rows_batch(ids, b, t0))
        };
        for (j, &s) in active.iter().enumerate() {
            // On the first interval every chain shares chain 0's rows.
            let base = if i == 0 { 0 } else { j * d };
            let x = &mut chains[s];
            for pos in 0..d {
                if x[pos] == mask && (last || rng.uniform() < p_unmask) {
                    let at = (base + pos) * width;
                    // Drop the MASK slot, as posterior_rows does.
                    x[pos] = rng.categorical(&flat[at..at + v]);
                }
            }
        }
    }
    Ok(chains)
}

/// Flat model rows for a whole population, forwards chunked to bound memory.
fn population_rows(
    chains: &[Vec<usize>],
    mut rows_of: impl FnMut(&[usize], usize) -> Vec<f64>,
) -> Vec<f64> {
    let mut flat = Vec::new();
    for group in chains.chunks(FORWARD_CHUNK) {
        let ids: Vec<usize> = group.iter().flatten().copied().collect();
        flat.extend(rows_of(&ids, group.len()));
    }
    flat
}

/// Ancestral unmasking driven by the single-time posterior model: over equal
/// intervals, each still-masked position unmasks with probability
/// (t_{i+1} − t_i)/(1 − t_i), drawing its token from the posterior at t_i.
/// The final interval unmasks everything, so no MASK survives.
pub fn posterior_generate(
    net: &PosteriorNet,
    n_steps: usize,
    rng: &mut SeedStream,
) -> Result<Vec<usize>> {
    if n_steps == 0 {
        return Err(CoreError::invalid("posterior_generate: n_steps must be ≥ 1"));
    }
    let mask = net.mask_token();
    let mut x = vec![mask; net.seq_len()];
    for i in 0..n_steps {
        if !x.contains(&mask) {
            break;
        }
        let (t0, t1) = (i as f64 / n_steps as f64, (i + 1) as f64 / n_steps as f64);
        let last = i + 1 == n_steps;
        let p_unmask = (t1 - t0) / (1.0 - t0);
        let rows = net.posterior_rows(&x, t0);
        for pos in 0..x.len() {
            if x[pos] == mask && (last || rng.uniform() < p_unmask) {
                x[pos] = rng.categorical(&rows[pos]);
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{ChainKind, ReferenceProcess};
    use crate::eval::tv_distance;

    #[test]
    fn oracle_one_step_matches_the_true_kernel_on_birth_death() {
        let p =
            ReferenceProcess::new(ChainKind::BirthDeath { n: 10, birth: 1.5, death: 1.0 }).unwrap();
        let q = &p.generator;
        let truth = kernel_between(q, 0.0, 1.0).unwrap();
        let mut rng = SeedStream::derive(3, "eval/test/oracle-onestep");
        for x0 in 0..4 {
            let emp =
                multi_step_empirical(oracle_kernel_matrix(q), x0, 1, 10_000, &mut rng).unwrap();
            let tv = tv_distance(&emp, &truth.column(x0));
            assert!(tv <= 0.02, "FAIL: oracle calibration TV {tv} > 0.02 from x0 = {x0}");
        }
    }

    #[test]
    fn oracle_tv_is_independent_of_step_count() {
        // Chapman–Kolmogorov: composing the true kernel over sub-intervals
        // leaves the end-state law unchanged, so only Monte Carlo noise moves.
        let p = ReferenceProcess::new(ChainKind::Ring { n: 3, lambda_f: 2.0, lambda_b: 1.0 })
            .unwrap();
        let q = &p.generator;
        let truth = kernel_between(q, 0.0, 1.0).unwrap();
        let mut rng = SeedStream::derive(4, "eval/test/semigroup");
        for n_steps in [1, 2, 4, 8] {
            let emp =
                multi_step_empirical(oracle_kernel_matrix(q), 0, n_steps, 20_000, &mut rng)
                    .unwrap();
            let tv = tv_distance(&emp, &truth.column(0));
            assert!(tv <= 0.015, "FAIL: {n_steps}-step oracle TV {tv} should be pure MC noise");
        }
    }

    #[test]
    fn single_interval_walk_equals_the_one_step_path() {
        let p = ReferenceProcess::new(ChainKind::Ring { n: 3, lambda_f: 2.0, lambda_b: 1.0 })
            .unwrap();
        let schedule = AlphaSchedule::exponential_for(&p.generator);
        let net = ExactKernelNet::new(3, 9).unwrap();
        let mut rng_a = SeedStream::derive(5, "eval/test/onestep");
        let mut rng_b = SeedStream::derive(5, "eval/test/onestep");
        for x0 in 0..3 {
            let a = one_step_generate(&net, &schedule, x0, &mut rng_a);
            let b = multi_step_generate(&net, &schedule, x0, 1, &mut rng_b).unwrap();
            assert_eq!(a, b, "FAIL: one-step and 1-interval multi-step laws must coincide");
        }
    }

    #[test]
    fn zero_step_counts_are_rejected() {
        let p = ReferenceProcess::new(ChainKind::TwoState { lambda: 2.0 }).unwrap();
        let schedule = AlphaSchedule::exponential_for(&p.generator);
        let net = ExactKernelNet::new(2, 1).unwrap();
        let mut rng = SeedStream::derive(1, "eval/test/zero-steps");
        assert!(multi_step_generate(&net, &schedule, 0, 0, &mut rng).is_err());
        assert!(multi_step_empirical(oracle_kernel_matrix(&p.generator), 0, 0, 10, &mut rng)
            .is_err());
    }

    #[test]
    fn untrained_sequence_model_draws_near_uniform_symbols() {
        // Zero-init head + α(0,1) ≈ 1 → every position ≈ uniform over V∪MASK.
        let net = SequenceKernelNet::new(4, 8, 2).unwrap();
        let schedule = AlphaSchedule::RatioToEnd { reg: 1e-6 };
        let mut rng = SeedStream::derive(6, "eval/test/seq-uniform");
        let mut counts = vec![0usize; 5];
        let n = 600;
        for _ in 0..n {
            for &tok in &seq_one_step_generate(&net, &schedule, &mut rng) {
                counts[tok] += 1;
            }
        }
        let total = (n * 8) as f64;
        for (tok, &c) in counts.iter().enumerate() {
            let f = c as f64 / total;
            assert!(
                (f - 0.2).abs() < 0.05,
                "FAIL: symbol {tok} frequency {f} should be ≈ 1/5"
            );
        }
    }

    #[test]
    fn posterior_sampler_leaves_no_masks_at_any_step_count() {
        let net = PosteriorNet::new(4, 8, 3).unwrap();
        let mask = net.mask_token();
        let mut rng = SeedStream::derive(7, "eval/test/pr-unmask");
        for n_steps in [1, 2, 4, 8] {
            for _ in 0..50 {
                let x = posterior_generate(&net, n_steps, &mut rng).unwrap();
                assert!(
                    x.iter().all(|&tok| tok != mask),
                    "FAIL: {n_steps}-step posterior sample kept a MASK"
                );
                assert!(x.iter().all(|&tok| tok < 4), "FAIL: token outside vocabulary");
            }
        }
    }

    #[test]
    fn untrained_posterior_draws_near_uniform_tokens() {
        let net = PosteriorNet::new(4, 8, 5).unwrap();
        let mut rng = SeedStream::derive(8, "eval/test/pr-uniform");
        let mut counts = vec![0usize; 4];
        let n = 600;
        for _ in 0..n {
            for &tok in &posterior_generate(&net, 1, &mut rng).unwrap() {
                counts[tok] += 1;
            }
        }
        let total = (n * 8) as f64;
        for (tok, &c) in counts.iter().enumerate() {
            let f = c as f64 / total;
            assert!((f - 0.25).abs() < 0.05, "FAIL: token {tok} frequency {f} should be ≈ 1/4");
        }
    }

    #[test]
    fn one_interval_population_matches_the_per_trajectory_loop_bitwise() {
        // Forwards consume no randomness, so skipping the redundant ones must
        // leave the draw stream — and therefore every sample — unchanged.
        let net = SequenceKernelNet::new(4, 8, 11).unwrap();
        let schedule = AlphaSchedule::ratio_to_end();
        let mut rng_a = SeedStream::derive(9, "eval/test/pop-bitwise");
        let mut rng_b = SeedStream::derive(9, "eval/test/pop-bitwise");
        let pop = seq_multi_step_batch(&net, &schedule, 1, 40, &mut rng_a).unwrap();
        let loop_: Vec<Vec<usize>> =
            (0..40).map(|_| seq_one_step_generate(&net, &schedule, &mut rng_b)).collect();
        assert_eq!(pop, loop_, "FAIL: 1-interval population diverged from the sample loop");

        let pr = PosteriorNet::new(4, 8, 11).unwrap();
        let mut rng_a = SeedStream::derive(10, "eval/test/pop-bitwise-pr");
        let mut rng_b = SeedStream::derive(10, "eval/test/pop-bitwise-pr");
        let pop = posterior_generate_batch(&pr, 1, 40, &mut rng_a).unwrap();
        let loop_: Vec<Vec<usize>> =
            (0..40).map(|_| posterior_generate(&pr, 1, &mut rng_b).unwrap()).collect();
        assert_eq!(pop, loop_, "FAIL: 1-interval posterior population diverged from the loop");
    }

    #[test]
    fn multi_step_population_matches_the_per_trajectory_law() {
        // Different rng interleaving, same distribution: pooled token
        // frequencies from the two samplers must agree to MC noise.
        let net = SequenceKernelNet::new(4, 6, 12).unwrap();
        let schedule = AlphaSchedule::ratio_to_end();
        let n = 2000;
        let mut rng = SeedStream::derive(13, "eval/test/pop-law");
        let pop = seq_multi_step_batch(&net, &schedule, 4, n, &mut rng).unwrap();
        let mut rng = SeedStream::derive(14, "eval/test/traj-law");
        let mut pop_counts = vec![0.0; 5];
        let mut traj_counts = vec![0.0; 5];
        for x in &pop {
            for &tok in x {
                pop_counts[tok] += 1.0;
            }
        }
        for _ in 0..n {
            for &tok in &seq_multi_step_generate(&net, &schedule, 4, &mut rng).unwrap() {
                traj_counts[tok] += 1.0;
            }
        }
        let total = (n * 6) as f64;
        for c in pop_counts.iter_mut().chain(traj_counts.iter_mut()) {
            *c /= total;
        }
        let tv = tv_distance(&pop_counts, &traj_counts);
        assert!(tv < 0.03, "FAIL: population vs trajectory token law TV {tv} ≥ 0.03");
    }

    #[test]
    fn posterior_population_unmasks_everything_and_is_deterministic() {
        let net = PosteriorNet::new(5, 7, 15).unwrap();
        let mask = net.mask_token();
        let mut rng_a = SeedStream::derive(16, "eval/test/pop-pr");
        let mut rng_b = SeedStream::derive(16, "eval/test/pop-pr");
        let a = posterior_generate_batch(&net, 8, 300, &mut rng_a).unwrap();
        let b = posterior_generate_batch(&net, 8, 300, &mut rng_b).unwrap();
        assert_eq!(a, b, "FAIL: identical seeds must reproduce the population");
        assert_eq!(a.len(), 300);
        for x in &a {
            assert!(x.iter().all(|&tok| tok != mask && tok < 5), "FAIL: MASK survived 8 steps");
        }
        assert!(posterior_generate_batch(&net, 0, 10, &mut rng_a).is_err());
        assert!(posterior_generate_batch(&net, 2, 0, &mut rng_a).is_err());
        assert!(seq_multi_step_batch(
            &SequenceKernelNet::new(4, 6, 1).unwrap(),
            &AlphaSchedule::ratio_to_end(),
            0,
            5,
            &mut rng_a
        )
        .is_err());
    }
}
