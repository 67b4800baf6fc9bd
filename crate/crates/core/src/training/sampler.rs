//! Time-pair sampling for interval-conditioned training.
//!
//! Every training step needs an interval (r, t). Two families are supported:
//! uniform pairs and logit-normal t with uniform r below it. Independently of
//! the family, `rt_ratio` controls how often a genuine wide interval is kept:
//! with probability 1 − rt_ratio the pair is collapsed to (t − ε, t), which
//! recovers instantaneous-generator training in the rt_ratio = 0 limit.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::SeedStream;

/// Distribution family for the raw (r, t) draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeSamplerKind {
    /// r ~ U[0, 1−ε), t ~ U[r+ε, 1).
    Uniform,
    /// t = sigmoid(z) with z ~ N(mu, 1), then r ~ U[0, max(t−ε, 0)).
    LogitNormal { mu: f64 },
}

/// Interval sampler with a minimum gap ε and a wide-interval fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSampler {
    pub kind: TimeSamplerKind,
    /// Minimum gap between r and t; also the collapsed-pair offset.
    pub epsilon: f64,
    /// Fraction of draws kept as wide intervals; the rest collapse to
    /// (t−ε, t).
    pub rt_ratio: f64,
}

impl TimeSampler {
    pub fn new(kind: TimeSamplerKind, epsilon: f64, rt_ratio: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(CoreError::invalid(format!(
                "time sampler: epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(0.0..=1.0).contains(&rt_ratio) {
            return Err(CoreError::invalid(format!(
                "time sampler: rt_ratio must lie in [0, 1], got {rt_ratio}"
            )));
        }
        Ok(TimeSampler { kind, epsilon, rt_ratio })
    }

    /// Uniform pairs with all draws kept wide — the default training regime.
    pub fn uniform(epsilon: f64) -> Result<Self> {
        TimeSampler::new(TimeSamplerKind::Uniform, epsilon, 1.0)
    }

    /// Draw one (r, t) pair. Invariants: 0 ≤ r < t ≤ 1 always; t − r ≥ ε for
    /// wide pairs, and t − r = ε for collapsed pairs.
    pub fn sample(&self, rng: &mut SeedStream) -> (f64, f64) {
        // The decision draw always happens so the stream layout does not
        // depend on rt_ratio's value. uniform() < 1 makes rt_ratio = 1 keep
        // every pair and rt_ratio = 0 collapse every pair.
        let wide = rng.uniform() < self.rt_ratio;
        let eps = self.epsilon;
        let (r, t) = match self.kind {
            TimeSamplerKind::Uniform => {
                let r = rng.uniform_in(0.0, 1.0 - eps);
                let t = rng.uniform_in(r + eps, 1.0);
                (r, t)
            }
            TimeSamplerKind::LogitNormal { mu } => {
                let z = mu + rng.normal();
                // Clamp keeps t ≥ ε so a valid r always exists; the clamp
                // fires with probability ~sigmoid-tail (≈1e-6 at ε = 0.01).
                let t = sigmoid(z).max(eps);
                let r = rng.uniform_in(0.0, t - eps);
                (r, t)
            }
        };
        if wide {
            (r, t)
        } else {
            (t - eps, t)
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ── Tests ──────────────────────────────────────────────────────────────────
