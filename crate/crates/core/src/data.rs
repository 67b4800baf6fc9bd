//! Synthetic sequence sources with analytically known per-position marginals.
//!
//! Both sources are drawn once from Dirichlet(0.1) priors — sparse enough
//! that generated sequences have visible structure — and are immutable after
//! construction, so every experiment can recompute ground-truth marginals
//! exactly instead of estimating them.

use crate::error::{CoreError, Result};
use crate::rng::SeedStream;
use serde::{Deserialize, Serialize};

const DIRICHLET_CONCENTRATION: f64 = 0.1;

/// Positions are independent; position d has its own fixed distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentSource {
    vocab_size: usize,
    seq_len: usize,
    seed: u64,
    /// seq_len rows of vocab_size probabilities.
    rows: Vec<Vec<f64>>,
}

/// First-order chain over positions: x₀ ~ initial, x_d ~ transition[x_{d−1}].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramSource {
    vocab_size: usize,
    seq_len: usize,
    seed: u64,
    initial: Vec<f64>,
    /// vocab_size rows, each a distribution over the next token.
    transition: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum SequenceSource {
    Independent(IndependentSource),
    Bigram(BigramSource),
}

fn check_geometry(vocab_size: usize, seq_len: usize) -> Result<()> {
    if vocab_size < 2 {
        return Err(CoreError::invalid(format!("data source: vocab_size {vocab_size} < 2")));
    }
    if seq_len == 0 {
        return Err(CoreError::invalid("data source: seq_len must be ≥ 1"));
    }
    Ok(())
}

pub fn make_independent(vocab_size: usize, seq_len: usize, seed: u64) -> Result<SequenceSource> {
    check_geometry(vocab_size, seq_len)?;
    let mut rng = SeedStream::derive(seed, "data/independent");
    let rows =
        (0..seq_len).map(|_| rng.dirichlet(DIRICHLET_CONCENTRATION, vocab_size)).collect();
    Ok(SequenceSource::Independent(IndependentSource { vocab_size, seq_len, seed, rows }))
}

pub fn make_bigram(vocab_size: usize, seq_len: usize, seed: u64) -> Result<SequenceSource> {
    check_geometry(vocab_size, seq_len)?;
    let mut rng = SeedStream::derive(seed, "data/bigram");
    let initial = rng.dirichlet(DIRICHLET_CONCENTRATION, vocab_size);
    let transition =
        (0..vocab_size).map(|_| rng.dirichlet(DIRICHLET_CONCENTRATION, vocab_size)).collect();
    Ok(SequenceSource::Bigram(BigramSource { vocab_size, seq_len, seed, initial, transition }))
}

impl BigramSource {
    /// Explicit construction, used to replay serialized sources and to pin
    /// degenerate chains (identity / uniform transitions) in tests.
    pub fn from_parts(
        seq_len: usize,
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
    ) -> Result<SequenceSource> {
        let vocab_size = initial.len();
        check_geometry(vocab_size, seq_len)?;
        let is_dist = |row: &[f64]| {
            row.len() == vocab_size
                && row.iter().all(|&p| p >= 0.0)
                && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        };
        if !is_dist(&initial) || transition.len() != vocab_size || !transition.iter().all(|r| is_dist(r))
        {
            return Err(CoreError::invalid(
                "bigram source: initial and every transition row must be distributions over \
                 the same vocabulary",
            ));
        }
        Ok(SequenceSource::Bigram(BigramSource { vocab_size, seq_len, seed: 0, initial, transition }))
    }
}

impl SequenceSource {
    pub fn vocab_size(&self) -> usize {
        match self {
            SequenceSource::Independent(s) => s.vocab_size,
            SequenceSource::Bigram(s) => s.vocab_size,
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            SequenceSource::Independent(s) => s.seq_len,
            SequenceSource::Bigram(s) => s.seq_len,
        }
    }

    /// Draw n i.i.d. clean sequences.
    pub fn sample_batch(&self, n: usize, rng: &mut SeedStream) -> Result<Vec<Vec<usize>>> {
        if n == 0 {
            return Err(CoreError::invalid("sample_batch: n must be ≥ 1"));
        }
        let mut out = Vec::with_capacity(n);
        match self {
            SequenceSource::Independent(s) => {
                for _ in 0..n {
                    out.push(s.rows.iter().map(|row| rng.categorical(row)).collect());
                }
            }
            SequenceSource::Bigram(s) => {
                for _ in 0..n {
                    let mut seq = Vec::with_capacity(s.seq_len);
                    let mut tok = rng.categorical(&s.initial);
                    seq.push(tok);
                    for _ in 1..s.seq_len {
                        tok = rng.categorical(&s.transition[tok]);
                        seq.push(tok);
                    }
                    out.push(seq);
                }
            }
        }
        Ok(out)
    }

    /// Exact per-position marginals: stored rows for the independent source,
    /// forward propagation marginal_d = Tᵀ·marginal_{d−1} for the bigram.
    pub fn true_marginals(&self) -> Vec<Vec<f64>> {
        match self {
            SequenceSource::Independent(s) => s.rows.clone(),
            SequenceSource::Bigram(s) => {
                let mut rows = Vec::with_capacity(s.seq_len);
                rows.push(s.initial.clone());
                for d in 1..s.seq_len {
                    let prev = &rows[d - 1];
                    let mut next = vec![0.0; s.vocab_size];
                    for (x, &px) in prev.iter().enumerate() {
                        for (y, &t_xy) in s.transition[x].iter().enumerate() {
                            next[y] += px * t_xy;
                        }
                    }
                    rows.push(next);
                }
                rows
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
    }

    fn empirical_marginals(samples: &[Vec<usize>], v: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![0.0; v]; d];
        for s in samples {
            for (pos, &tok) in s.iter().enumerate() {
                rows[pos][tok] += 1.0;
            }
        }
        let n = samples.len() as f64;
        for row in &mut rows {
            for p in row.iter_mut() {
                *p /= n;
            }
        }
        rows
    }

    #[test]
    fn same_seed_gives_bit_identical_sources() {
        let a = make_independent(4, 8, 77).unwrap();
        let b = make_independent(4, 8, 77).unwrap();
        assert_eq!(a, b, "FAIL: identical seeds must give bit-identical sources");
        let a = make_bigram(4, 8, 77).unwrap();
        let b = make_bigram(4, 8, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rows_are_distributions() {
        for seed in 0..20 {
            let src = make_independent(6, 5, seed).unwrap();
            for row in src.true_marginals() {
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!(
                    (row.iter().sum::<f64>() - 1.0).abs() < 1e-12,
                    "FAIL: marginal row must sum to 1 within 1e-12"
                );
            }
            if let SequenceSource::Bigram(b) = make_bigram(6, 5, seed).unwrap() {
                for row in &b.transition {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn concentration_tenth_makes_sparse_rows() {
        // Dirichlet(0.1) on 8 symbols puts most mass on one entry.
        let mut mean_max = 0.0;
        for seed in 0..100 {
            let src = make_independent(8, 1, 1000 + seed).unwrap();
            mean_max += src.true_marginals()[0].iter().cloned().fold(0.0, f64::max);
        }
        mean_max /= 100.0;
        assert!(
            mean_max > 0.5,
            "FAIL: expected mean max entry > 0.5 under Dirichlet(0.1) on 8 symbols, got {mean_max}"
        );
    }

    #[test]
    fn geometry_preconditions() {
        assert!(make_independent(1, 4, 0).is_err());
        assert!(make_independent(4, 0, 0).is_err());
        assert!(make_bigram(1, 4, 0).is_err());
        let src = make_independent(4, 4, 0).unwrap();
        let mut rng = SeedStream::derive(0, "data/test/zero");
        assert!(src.sample_batch(0, &mut rng).is_err(), "FAIL: n = 0 must be rejected");
    }

    #[test]
    fn independent_empirical_marginals_match_stored_rows() {
        let src = make_independent(4, 8, 3).unwrap();
        let mut rng = SeedStream::derive(3, "data/test/indep-marginals");
        let samples = src.sample_batch(100_000, &mut rng).unwrap();
        let emp = empirical_marginals(&samples, 4, 8);
        for (row_true, row_emp) in src.true_marginals().iter().zip(&emp) {
            let d = tv(row_true, row_emp);
            assert!(d <= 0.01, "FAIL: per-position TV {d} > 0.01 at 1e5 samples");
        }
    }

    #[test]
    fn bigram_second_position_matches_exact_propagation() {
        let src = make_bigram(4, 3, 11).unwrap();
        let mut rng = SeedStream::derive(11, "data/test/bigram-pos2");
        let samples = src.sample_batch(1_000_000, &mut rng).unwrap();
        let emp = empirical_marginals(&samples, 4, 3);
        let truth = src.true_marginals();
        let d = tv(&truth[1], &emp[1]);
        assert!(d <= 0.005, "FAIL: position-2 marginal TV {d} > 0.005 at 1e6 samples");
    }

    #[test]
    fn bigram_empirical_pair_frequencies_match_transition() {
        let src = make_bigram(3, 6, 21).unwrap();
        let transition = match &src {
            SequenceSource::Bigram(b) => b.transition.clone(),
            _ => unreachable!(),
        };
        let mut rng = SeedStream::derive(21, "data/test/bigram-pairs");
        let samples = src.sample_batch(100_000, &mut rng).unwrap();
        // conditional next-token frequencies given the previous token
        let v = 3;
        let mut counts = vec![vec![0.0f64; v]; v];
        for s in &samples {
            for w in s.windows(2) {
                counts[w[0]][w[1]] += 1.0;
            }
        }
        for x in 0..v {
            let total: f64 = counts[x].iter().sum();
            if total < 1000.0 {
                continue; // too few visits to x for a stable estimate
            }
            let emp: Vec<f64> = counts[x].iter().map(|&c| c / total).collect();
            let d = tv(&emp, &transition[x]);
            assert!(d <= 0.01, "FAIL: conditional row {x} TV {d} > 0.01");
        }
    }

    #[test]
    fn bigram_identity_transition_is_fixed_point() {
        let initial = vec![0.5, 0.25, 0.25];
        let eye = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let src = BigramSource::from_parts(5, initial.clone(), eye).unwrap();
        for row in src.true_marginals() {
            assert_eq!(row, initial, "FAIL: identity transition must copy the initial marginal");
        }
    }

    #[test]
    fn bigram_uniform_transition_mixes_in_one_step() {
        let initial = vec![0.9, 0.05, 0.05];
        let uniform = vec![vec![1.0 / 3.0; 3]; 3];
        let src = BigramSource::from_parts(4, initial.clone(), uniform).unwrap();
        let rows = src.true_marginals();
        assert_eq!(rows[0], initial);
        for row in &rows[1..] {
            for &p in row {
                assert!(
                    (p - 1.0 / 3.0).abs() < 1e-15,
                    "FAIL: positions ≥ 2 must be exactly uniform after one uniform step"
                );
            }
        }
    }

    #[test]
    fn sources_round_trip_through_json() {
        let src = make_bigram(4, 8, 9).unwrap();
        let text = serde_json::to_string(&src).unwrap();
        let back: SequenceSource = serde_json::from_str(&text).unwrap();
        assert_eq!(src, back, "FAIL: JSON round-trip must preserve the source exactly");
        let src = make_independent(4, 8, 9).unwrap();
        let back: SequenceSource =
            serde_json::from_str(&serde_json::to_string(&src).unwrap()).unwrap();
        assert_eq!(src, back);
    }
}
