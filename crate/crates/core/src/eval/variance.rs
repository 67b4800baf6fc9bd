//! Model-free training-target variance probe.
//!
//! Contrasts the kernel-residual target (conditional generator rows, scale
//! 1/(1−t) at masked positions) against the posterior-regression target
//! (one-hot clean tokens): the former's per-element variance grows as
//! 1/(1−t)² while the latter stays flat, which is the stated reason the
//! single-time objective trains more stably near t = 1.

use crate::data::make_independent;
use crate::error::{CoreError, Result};
use crate::masking::{corrupt, generator_target, MaskingConfig};
use crate::rng::SeedStream;

/// Default probe grid: dense through the bulk, pushed close to t = 1 where
/// the divergence shows.
pub const VARIANCE_T_GRID: [f64; 13] =
    [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.97, 0.99];

#[derive(Debug, Clone, serde::Serialize)]
pub struct VarianceProbeReport {
    pub t_grid: Vec<f64>,
    /// Mean over vector elements of the per-element variance of the
    /// kernel-residual target, per t.
    pub kr_variance: Vec<f64>,
    /// Same statistic for the one-hot posterior target.
    pub pr_variance: Vec<f64>,
    /// Mean L2 norm of the kernel-residual target, per t.
    pub kr_target_l2: Vec<f64>,
    /// Least-squares slope of log(kr_variance) against −log(1−t).
    pub slope: f64,
    /// Intercept of the same fit (log of the variance constant).
    pub log_constant: f64,
}

/// Corrupt `n_samples` clean sequences at each grid time and measure both
/// targets' variance at masked positions. Model-free: only the data source
/// and the masking process participate.
pub fn variance_probe(
    vocab_size: usize,
    seq_len: usize,
    t_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<VarianceProbeReport> {
    if t_grid.is_empty() {
        return Err(CoreError::invalid("variance_probe: empty t grid"));
    }
    if t_grid.iter().any(|&t| !(0.0..1.0).contains(&t)) {
        return Err(CoreError::invalid("variance_probe: every t must lie in [0, 1)"));
    }
    if n_samples == 0 {
        return Err(CoreError::invalid("variance_probe: n_samples must be ≥ 1"));
    }
    let cfg = MaskingConfig::new(vocab_size, seq_len)?;
    let source = make_independent(vocab_size, seq_len, seed)?;
    let mut rng = SeedStream::derive(seed, "eval/variance-probe");
    let a = cfg.alphabet();
    let mask = cfg.mask_token();

    let mut kr_variance = Vec::with_capacity(t_grid.len());
    let mut pr_variance = Vec::with_capacity(t_grid.len());
    let mut kr_target_l2 = Vec::with_capacity(t_grid.len());

    for &t in t_grid {
        // Running first/second moments per element, over masked positions.
        let mut kr_m1 = vec![0.0; a];
        let mut kr_m2 = vec![0.0; a];
        let mut pr_m1 = vec![0.0; vocab_size];
        let mut pr_m2 = vec![0.0; vocab_size];
        let mut l2_sum = 0.0;
        let mut pool = 0usize;

        let clean = source.sample_batch(n_samples, &mut rng)?;
        for x1 in &clean {
            let xt = corrupt(&cfg, x1, t, &mut rng);
            let target = generator_target(&cfg, &xt, x1, t)?;
            for (pos, &tok) in xt.iter().enumerate() {
                if tok != mask {
                    continue;
                }
                pool += 1;
                let row = &target[pos * a..(pos + 1) * a];
                let mut norm2 = 0.0;
                for (e, &g) in row.iter().enumerate() {
                    kr_m1[e] += g;
                    kr_m2[e] += g * g;
                    norm2 += g * g;
                }
                l2_sum += norm2.sqrt();
                let one_hot = x1[pos];
                for e in 0..vocab_size {
                    let v = if e == one_hot { 1.0 } else { 0.0 };
                    pr_m1[e] += v;
                    pr_m2[e] += v * v;
                }
            }
        }
        if pool < 2 {
            return Err(CoreError::invalid(format!(
                "variance_probe: only {pool} masked positions at t = {t}; increase n_samples"
            )));
        }
        let n = pool as f64;
        let mean_var = |m1: &[f64], m2: &[f64]| -> f64 {
            m1.iter()
                .zip(m2)
                .map(|(&s1, &s2)| (s2 - s1 * s1 / n) / (n - 1.0))
                .sum::<f64>()
                / m1.len() as f64
        };
        kr_variance.push(mean_var(&kr_m1, &kr_m2));
        pr_variance.push(mean_var(&pr_m1, &pr_m2));
        kr_target_l2.push(l2_sum / n);
    }

    // Log-log fit over the full grid: kr_variance ≈ C·(1−t)^{−slope}.
    let xs: Vec<f64> = t_grid.iter().map(|&t| -(1.0 - t).ln()).collect();
    let ys: Vec<f64> = kr_variance.iter().map(|&v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(CoreError::invalid("variance_probe: need at least two distinct grid times"));
    }
    let slope = sxy / sxx;
    let log_constant = my - slope * mx;

    Ok(VarianceProbeReport {
        t_grid: t_grid.to_vec(),
        kr_variance,
        pr_variance,
        kr_target_l2,
        slope,
        log_constant,
    })
}
