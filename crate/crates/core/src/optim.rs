//! AdamW with decoupled weight decay, global-norm gradient clipping, and the
//! cosine learning-rate schedule.

use crate::tensor::Tensor;

/// AdamW optimizer state: per-parameter moment accumulators plus a strictly
/// increasing step counter. Moments are sized on the first step.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update. Decoupled decay scales each parameter by (1 − lr·wd)
    /// *before* the moment update; then the bias-corrected Adam step applies.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        assert!(lr > 0.0, "adamw: lr must be positive, got {lr}");
        assert_eq!(
            params.len(),
            grads.len(),
            "adamw: {} parameters but {} gradients",
            params.len(),
            grads.len()
        );
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(
                p.data.len(),
                g.len(),
                "adamw: parameter {i} has {} values but gradient has {}",
                p.data.len(),
                g.len()
            );
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                p.data[j] *= decay;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.data[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients by max_norm/‖g‖ when the global L2 norm exceeds
/// max_norm; otherwise leave them untouched. Returns the pre-clip norm.
/// The threshold carries a 1-ulp-scale slack so the operation is idempotent.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip_global_norm: max_norm must be positive, got {max_norm}");
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|&x| x * x).sum();
    let norm = sq.sqrt();
    if norm > max_norm * (1.0 + 1e-12) {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Cosine annealing from base_lr at step 0 down to base_lr·floor_fraction at
/// step = total_steps.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, floor_fraction: f64) -> f64 {
    assert!(step <= total_steps, "cosine_lr: step {step} past total {total_steps}");
    assert!(
        floor_fraction > 0.0 && floor_fraction <= 1.0,
        "cosine_lr: floor_fraction must lie in (0,1], got {floor_fraction}"
    );
    if total_steps == 0 {
        return base_lr;
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    base_lr * (floor_fraction + (1.0 - floor_fraction) * 0.5 * (1.0 + phase.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(vals: &[f64]) -> Tensor {
        Tensor::from_vec(&[vals.len()], vals.to_vec())
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut g = vec![vec![0.3, 0.4]];
        let norm = clip_global_norm(&mut g, 1.0);
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(g[0], vec![0.3, 0.4], "FAIL: norm 0.5 < 1.0 must be unchanged");
    }

    #[test]
    fn clip_scales_three_four_five() {
        let mut g = vec![vec![3.0], vec![4.0]];
        let norm = clip_global_norm(&mut g, 1.0);
        assert!((norm - 5.0).abs() < 1e-15);
        assert!((g[0][0] - 0.6).abs() < 1e-15, "FAIL: (3,4) clipped to norm 1 must be (0.6,0.8)");
        assert!((g[1][0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_scale_factor_is_ratio() {
        let mut g = vec![vec![4.0, 0.0]];
        clip_global_norm(&mut g, 1.0);
        assert!((g[0][0] - 1.0).abs() < 1e-15, "FAIL: norm 4 with max 1 must scale by 0.25");
    }

    #[test]
    fn clip_is_idempotent() {
        let mut g = vec![vec![0.77, -3.1, 2.9, 14.0, -0.003]];
        clip_global_norm(&mut g, 1.0);
        let once = g.clone();
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g, once, "FAIL: clipping twice must equal clipping once, bit for bit");
    }

    #[test]
    fn adamw_zero_grad_zero_decay_is_identity() {
        let mut params = vec![p(&[1.5, -2.5])];
        let grads = vec![vec![0.0, 0.0]];
        let mut opt = AdamW::new(0.0);
        for _ in 0..3 {
            opt.step(&mut params, &grads, 3e-4);
        }
        assert_eq!(params[0].data, vec![1.5, -2.5], "FAIL: zero grad + zero decay must not move");
    }

    #[test]
    fn adamw_first_step_moves_by_lr_sign() {
        let mut params = vec![p(&[1.0])];
        let grads = vec![vec![0.02]];
        let mut opt = AdamW::new(0.0);
        let lr = 3e-4;
        opt.step(&mut params, &grads, lr);
        let moved = 1.0 - params[0].data[0];
        // first-step bias correction makes the update lr·g/(|g|+eps) ≈ lr
        assert!(
            (moved - lr).abs() < 1e-7,
            "FAIL: first step should move ≈ lr·sign(g), moved {moved}"
        );
    }

    #[test]
    fn adamw_decoupled_decay_with_zero_grad() {
        let mut params = vec![p(&[1.0])];
        let grads = vec![vec![0.0]];
        let mut opt = AdamW::new(1e-5);
        opt.step(&mut params, &grads, 3e-4);
        let expect = 1.0 - 3e-4 * 1e-5;
        assert_eq!(params[0].data[0], expect, "FAIL: zero grad must scale by exactly (1−lr·wd)");
    }

    #[test]
    fn adamw_step_counter_increases() {
        let mut params = vec![p(&[0.0])];
        let grads = vec![vec![1.0]];
        let mut opt = AdamW::new(0.0);
        assert_eq!(opt.step_count(), 0);
        opt.step(&mut params, &grads, 1e-3);
        opt.step(&mut params, &grads, 1e-3);
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    #[should_panic(expected = "adamw")]
    fn adamw_rejects_shape_mismatch() {
        let mut params = vec![p(&[0.0, 0.0])];
        let grads = vec![vec![1.0]];
        AdamW::new(0.0).step(&mut params, &grads, 1e-3);
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        let base = 3e-4;
        assert_eq!(cosine_lr(0, 1000, base, 0.01), base, "FAIL: step 0 must be base_lr");
        assert_eq!(
            cosine_lr(1000, 1000, base, 0.01),
            0.01 * base,
            "FAIL: final step must be exactly 1% of base_lr"
        );
        let mid = cosine_lr(500, 1000, base, 0.01);
        assert!(
            (mid - 0.505 * base).abs() < 1e-18,
            "FAIL: midpoint must be 0.505·base_lr, got {mid}"
        );
    }

    #[test]
    fn cosine_schedule_is_monotone_decreasing() {
        let mut prev = f64::INFINITY;
        for s in 0..=200 {
            let lr = cosine_lr(s, 200, 1.0, 0.01);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
