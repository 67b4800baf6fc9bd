//! The masking corruption process for sequences.
//!
//! At time t each position of a clean sequence is independently MASK with
//! probability 1−t. Conditioned on the clean sequence x₁, the per-position
//! reverse kernel is closed-form: a masked position unmasks to its clean
//! token with probability (t−r)/(1−r) over [r,t], and an unmasked position
//! never moves. The conditional generator at a masked position carries rate
//! 1/(1−t) toward the clean token and −1/(1−t) out of MASK; its magnitude
//! diverging as t→1 is the variance driver the probes measure.

use crate::error::{CoreError, Result};
use crate::rng::SeedStream;
use serde::{Deserialize, Serialize};

/// Vocabulary/sequence geometry. Tokens 0..vocab_size are clean; the MASK id
/// is vocab_size itself, one past the clean range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
}

impl MaskingConfig {
    pub fn new(vocab_size: usize, seq_len: usize) -> Result<Self> {
        if vocab_size == 0 || seq_len == 0 {
            return Err(CoreError::invalid(format!(
                "masking: vocab_size and seq_len must be positive, got ({vocab_size}, {seq_len})"
            )));
        }
        Ok(MaskingConfig { vocab_size, seq_len })
    }

    pub fn mask_token(&self) -> usize {
        self.vocab_size
    }

    /// Alphabet size including MASK — the model head width.
    pub fn alphabet(&self) -> usize {
        self.vocab_size + 1
    }
}

/// Independently replace each position by MASK with probability 1−t.
pub fn corrupt(cfg: &MaskingConfig, x1: &[usize], t: f64, rng: &mut SeedStream) -> Vec<usize> {
    assert!((0.0..=1.0).contains(&t), "corrupt: t = {t} outside [0,1]");
    assert_eq!(x1.len(), cfg.seq_len, "corrupt: sequence length {} ≠ {}", x1.len(), cfg.seq_len);
    let mask = cfg.mask_token();
    x1.iter().map(|&tok| if rng.uniform() < 1.0 - t { mask } else { tok }).collect()
}

/// The conditional per-position kernel column K_{r,t}(· | x_r, x_1) over
/// V ∪ {MASK}: point mass when already clean, otherwise (t−r)/(1−r) of the
/// mass moves from MASK onto the clean token.
pub fn conditional_kernel_column(
    cfg: &MaskingConfig,
    xr_token: usize,
    x1_token: usize,
    r: f64,
    t: f64,
) -> Result<Vec<f64>> {
    if !(0.0 <= r && r <= t && t <= 1.0) {
        return Err(CoreError::invalid(format!(
            "conditional kernel: need 0 ≤ r ≤ t ≤ 1, got r = {r}, t = {t}"
        )));
    }
    if x1_token >= cfg.vocab_size {
        return Err(CoreError::invalid(format!(
            "conditional kernel: clean token {x1_token} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let mask = cfg.mask_token();
    if xr_token != mask && xr_token != x1_token {
        return Err(CoreError::invalid(format!(
            "conditional kernel: corrupted token {xr_token} is neither MASK nor the clean \
             token {x1_token} — impossible under masking corruption"
        )));
    }
    let mut col = vec![0.0; cfg.alphabet()];
    if xr_token != mask {
        col[xr_token] = 1.0;
    } else if r >= 1.0 {
        col[x1_token] = 1.0; // the interval has zero length left of t = 1
    } else {
        let unmask = (t - r) / (1.0 - r);
        col[x1_token] = unmask;
        col[mask] = 1.0 - unmask;
    }
    Ok(col)
}

/// Independent per-position draw from the conditional kernel.
pub fn sample_endpoint(
    cfg: &MaskingConfig,
    xr: &[usize],
    x1: &[usize],
    r: f64,
    t: f64,
    rng: &mut SeedStream,
) -> Result<Vec<usize>> {
    if xr.len() != cfg.seq_len || x1.len() != cfg.seq_len {
        return Err(CoreError::invalid(format!(
            "sample_endpoint: lengths ({}, {}) ≠ seq_len {}",
            xr.len(),
            x1.len(),
            cfg.seq_len
        )));
    }
    let mask = cfg.mask_token();
    let mut out = Vec::with_capacity(cfg.seq_len);
    for (&a, &c) in xr.iter().zip(x1) {
        if a != mask {
            if a != c {
                return Err(CoreError::invalid(format!(
                    "sample_endpoint: unmasked token {a} disagrees with clean token {c}"
                )));
            }
            out.push(a);
        } else {
            let unmask = if r >= 1.0 { 1.0 } else { (t - r) / (1.0 - r) };
            out.push(if rng.uniform() < unmask { c } else { mask });
        }
    }
    Ok(out)
}

/// Per-position conditional-generator targets over V ∪ {MASK}: ±1/(1−t) at
/// masked positions (toward the clean token, out of MASK), zeros elsewhere.
/// Returned row-major as seq_len × (|V|+1).
pub fn generator_target(
    cfg: &MaskingConfig,
    xt: &[usize],
    x1: &[usize],
    t: f64,
) -> Result<Vec<f64>> {
    if t >= 1.0 {
        return Err(CoreError::invalid(format!(
            "generator_target: rate 1/(1−t) diverges at t = {t}; the time sampler keeps t < 1"
        )));
    }
    if xt.len() != cfg.seq_len || x1.len() != cfg.seq_len {
        return Err(CoreError::invalid(format!(
            "generator_target: lengths ({}, {}) ≠ seq_len {}",
            xt.len(),
            x1.len(),
            cfg.seq_len
        )));
    }
    let a = cfg.alphabet();
    let mask = cfg.mask_token();
    let rate = 1.0 / (1.0 - t);
    let mut target = vec![0.0; cfg.seq_len * a];
    for (d, (&tok, &clean)) in xt.iter().zip(x1).enumerate() {
        if tok == mask {
            target[d * a + clean] = rate;
            target[d * a + mask] = -rate;
        } else if tok != clean {
            return Err(CoreError::invalid(format!(
                "generator_target: unmasked token {tok} disagrees with clean token {clean}"
            )));
        }
    }
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(v: usize, d: usize) -> MaskingConfig {
        MaskingConfig::new(v, d).unwrap()
    }

    #[test]
    fn corrupt_at_endpoints() {
        let c = cfg(4, 8);
        let x1 = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let mut rng = SeedStream::derive(5, "masking/test/endpoints");
        assert_eq!(corrupt(&c, &x1, 1.0, &mut rng), x1, "FAIL: t = 1 must leave x1 unchanged");
        let fully = corrupt(&c, &x1, 0.0, &mut rng);
        assert!(
            fully.iter().all(|&t| t == c.mask_token()),
            "FAIL: t = 0 must mask every position"
        );
    }

    #[test]
    fn corrupt_mask_fraction_concentrates() {
        let c = cfg(4, 16);
        let x1: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let mut rng = SeedStream::derive(6, "masking/test/fraction");
        let trials = 100_000;
        let mut masked = 0usize;
        for _ in 0..trials {
            masked +=
                corrupt(&c, &x1, 0.7, &mut rng).iter().filter(|&&t| t == c.mask_token()).count();
        }
        let frac = masked as f64 / (trials * 16) as f64;
        assert!(
            (frac - 0.30).abs() < 0.005,
            "FAIL: mask fraction {frac} at t = 0.7, expected 0.30 ± 0.005"
        );
    }

    #[test]
    fn conditional_kernel_point_masses() {
        let c = cfg(4, 8);
        // r = t → point mass on the current token
        let col = conditional_kernel_column(&c, c.mask_token(), 2, 0.4, 0.4).unwrap();
        assert_eq!(col[c.mask_token()], 1.0);
        let col = conditional_kernel_column(&c, 2, 2, 0.4, 0.4).unwrap();
        assert_eq!(col[2], 1.0);
        // unmasked token never moves regardless of (r,t)
        let col = conditional_kernel_column(&c, 1, 1, 0.2, 0.9).unwrap();
        assert_eq!(col[1], 1.0);
    }

    #[test]
    fn conditional_kernel_hand_value() {
        let c = cfg(4, 8);
        let col = conditional_kernel_column(&c, c.mask_token(), 3, 0.3, 0.65).unwrap();
        assert!(
            (col[3] - 0.5).abs() < 1e-15,
            "FAIL: unmask probability at (0.3, 0.65) must be 0.35/0.7 = 0.5"
        );
        assert!((col[c.mask_token()] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conditional_kernel_rejects_impossible_state() {
        let c = cfg(4, 8);
        assert!(conditional_kernel_column(&c, 1, 2, 0.2, 0.5).is_err());
    }

    #[test]
    fn sample_endpoint_degenerate_cases() {
        let c = cfg(4, 6);
        let x1 = vec![0, 1, 2, 3, 0, 1];
        let mut rng = SeedStream::derive(8, "masking/test/endpoint");
        let xr = corrupt(&c, &x1, 0.5, &mut rng);
        let same = sample_endpoint(&c, &xr, &x1, 0.5, 0.5, &mut rng).unwrap();
        assert_eq!(same, xr, "FAIL: r = t endpoint must return x_r");
        let clean = sample_endpoint(&c, &xr, &x1, 0.5, 1.0, &mut rng).unwrap();
        assert_eq!(clean, x1, "FAIL: t = 1 endpoint must fully unmask");
    }

    #[test]
    fn sample_endpoint_unmask_rate_matches_closed_form() {
        let c = cfg(2, 1);
        let x1 = vec![1];
        let xr = vec![c.mask_token()];
        let (r, t) = (0.2, 0.6);
        let want = (t - r) / (1.0 - r);
        let mut rng = SeedStream::derive(9, "masking/test/unmask-rate");
        let draws = 100_000;
        let mut unmasked = 0usize;
        for _ in 0..draws {
            if sample_endpoint(&c, &xr, &x1, r, t, &mut rng).unwrap()[0] == 1 {
                unmasked += 1;
            }
        }
        let freq = unmasked as f64 / draws as f64;
        assert!(
            (freq - want).abs() < 0.005,
            "FAIL: empirical unmask rate {freq} vs closed form {want}"
        );
    }

    #[test]
    fn generator_target_structure() {
        let c = cfg(4, 3);
        let x1 = vec![2, 0, 1];
        let xt = vec![c.mask_token(), 0, c.mask_token()];
        let g = generator_target(&c, &xt, &x1, 0.5).unwrap();
        let a = c.alphabet();
        // masked position 0: ±2 toward clean token 2 / out of MASK
        assert_eq!(g[2], 2.0, "FAIL: rate at t = 0.5 must be 1/(1−0.5) = 2");
        assert_eq!(g[c.mask_token()], -2.0);
        // unmasked position 1: all zero
        assert!(g[a..2 * a].iter().all(|&v| v == 0.0));
        // every column sums to zero exactly
        for d in 0..3 {
            let s: f64 = g[d * a..(d + 1) * a].iter().sum();
            assert_eq!(s, 0.0, "FAIL: target column {d} must sum to zero exactly");
        }
    }

    #[test]
    fn generator_target_no_masks_is_all_zero() {
        let c = cfg(4, 4);
        let x1 = vec![0, 1, 2, 3];
        let g = generator_target(&c, &x1, &x1, 0.8).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_target_rejects_t_one() {
        let c = cfg(4, 2);
        let x1 = vec![0, 1];
        assert!(generator_target(&c, &x1, &x1, 1.0).is_err());
    }

    #[test]
    fn generator_target_magnitude_scales_with_horizon() {
        let c = cfg(4, 1);
        let x1 = vec![3];
        let xt = vec![c.mask_token()];
        let g05 = generator_target(&c, &xt, &x1, 0.5).unwrap();
        let g09 = generator_target(&c, &xt, &x1, 0.9).unwrap();
        let ratio = g09[3] / g05[3];
        assert!((ratio - 5.0).abs() < 1e-12, "FAIL: t = 0.9 rate must be 5× the t = 0.5 rate");
    }

    #[test]
    fn joint_kernel_factorizes_over_positions() {
        // D = 2, |V| = 2: empirical joint endpoint frequencies match the
        // product of per-position closed forms.
        let c = cfg(2, 2);
        let x1 = vec![1, 0];
        let xr = vec![c.mask_token(), c.mask_token()];
        let (r, t) = (0.25, 0.7);
        let col0 = conditional_kernel_column(&c, xr[0], x1[0], r, t).unwrap();
        let col1 = conditional_kernel_column(&c, xr[1], x1[1], r, t).unwrap();
        let mut rng = SeedStream::derive(12, "masking/test/factorize");
        let draws = 1_000_000;
        let a = c.alphabet();
        let mut counts = vec![0usize; a * a];
        for _ in 0..draws {
            let s = sample_endpoint(&c, &xr, &x1, r, t, &mut rng).unwrap();
            counts[s[0] * a + s[1]] += 1;
        }
        let mut tv = 0.0;
        for i in 0..a {
            for j in 0..a {
                let emp = counts[i * a + j] as f64 / draws as f64;
                tv += (emp - col0[i] * col1[j]).abs();
            }
        }
        tv /= 2.0;
        assert!(tv <= 0.005, "FAIL: joint empirical vs product-form TV {tv} > 0.005");
    }

    proptest! {
        /// The closed-form conditional kernel is always a distribution, and
        /// unmasking composes: [r,s] then [s,t] equals [r,t].
        #[test]
        fn conditional_kernel_is_distribution_and_composes(
            r in 0.0f64..0.98,
            ds in 0.01f64..1.0,
            dt in 0.01f64..1.0,
        ) {
            let c = cfg(5, 4);
            let s = r + ds * (1.0 - r);
            let t = s + dt * (1.0 - s);
            let col = conditional_kernel_column(&c, c.mask_token(), 3, r, t).unwrap();
            let sum: f64 = col.iter().sum();
            prop_assert!(col.iter().all(|&p| p >= 0.0));
            prop_assert!((sum - 1.0).abs() < 1e-12);
            // composition of unmask probabilities
            let a1 = (s - r) / (1.0 - r);
            let a2 = (t - s) / (1.0 - s);
            let direct = (t - r) / (1.0 - r);
            let composed = a1 + (1.0 - a1) * a2;
            prop_assert!((composed - direct).abs() < 1e-12);
        }
    }
}
