//! The training loop: sample → loss → backward → clip → AdamW, with cosine
//! learning rate, periodic snapshots, and a per-step loss log. Everything is
//! a pure function of (settings, seed); snapshots run synchronously so they
//! can never perturb the training RNG stream.

use std::io::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::optim::{clip_global_norm, cosine_lr, AdamW};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

/// Optimizer/schedule knobs shared by every objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Cosine schedule floor as a fraction of `lr`.
    pub lr_floor: f64,
    /// Central-difference half-width for ∂_t K_θ.
    pub fd_step: f64,
    /// Snapshot cadence in steps (snapshots also fire on the last step).
    pub snapshot_every: usize,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(CoreError::invalid(format!(
                "train settings: iterations ({}) and batch size ({}) must be positive",
                self.iterations, self.batch_size
            )));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) || !(self.fd_step > 0.0) {
            return Err(CoreError::invalid(
                "train settings: lr, clip_norm and fd_step must be positive".to_string(),
            ));
        }
        if self.snapshot_every == 0 {
            return Err(CoreError::invalid(
                "train settings: snapshot_every must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Write the loss log as CSV with a header row.
pub fn write_loss_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,loss,lr,grad_norm")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.step, r.loss, r.lr, r.grad_norm)?;
    }
    out.flush()?;
    Ok(())
}

/// Run the optimization loop over an arbitrary model.
///
/// * `loss_and_grads` draws a batch from `rng` and returns the scalar loss
///   plus gradients aligned with `params_of(net)`.
/// * `on_snapshot` fires every `snapshot_every` steps and after the final
///   step, receiving the step count (1-based).
///
/// A non-finite loss aborts with a diagnostic carrying (step, lr, grad
/// norm); the gradient norm is computed before the finiteness check so the
/// diagnostic is as informative as the failing step allows.
pub fn train_driver<N>(
    net: &mut N,
    settings: &TrainSettings,
    rng: &mut SeedStream,
    mut loss_and_grads: impl FnMut(&N, &mut SeedStream) -> Result<(f64, Vec<Vec<f64>>)>,
    params_of: impl Fn(&mut N) -> &mut [Tensor],
    mut on_snapshot: impl FnMut(&N, usize) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    settings.validate()?;
    let total = settings.iterations;
    let mut opt = AdamW::new(settings.weight_decay);
    let mut records = Vec::with_capacity(total);
    for step in 0..total {
        let lr = cosine_lr(step, total, settings.lr, settings.lr_floor);
        let (loss, mut grads) = loss_and_grads(&*net, rng)?;
        let grad_norm = clip_global_norm(&mut grads, settings.clip_norm);
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { step, loss, lr, grad_norm });
        }
        opt.step(params_of(net), &grads, lr);
        records.push(StepRecord { step, loss, lr, grad_norm });
        let done = step + 1;
        if done % settings.snapshot_every == 0 || done == total {
            on_snapshot(&*net, done)?;
        }
    }
    Ok(records)
}

// ── Tests ──────────────────────────────────────────────────────────────────
