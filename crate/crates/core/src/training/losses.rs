//! Training objectives.
//!
//! Four objectives share one skeleton — draw a batch, build a scalar loss on
//! a fresh tape, backprop, hand (value, gradients) to the optimizer:
//!
//! * kernel residual (KR): squared error between the model's interval
//!   derivative ∂_t K_θ and a stochastic conditional-generator target;
//! * posterior regression (PR): cross-entropy of a single-time posterior
//!   against clean tokens at masked positions;
//! * kernel cross-entropy (KCE): cross-entropy of the interval kernel's
//!   t-slice against clean tokens, same conditioning as KR;
//! * hybrid: KR + λ·CE on the same batch, λ ∈ [0, ∞].
//!
//! The boundary-penalty objective is the ablation baseline: an unconstrained
//! softmax kernel whose identity-at-t=r must be bought with a penalty term
//! instead of the mixture construction.
//!
//! Structural rule: endpoints x_t are always drawn from the *reference*
//! kernel (the oracle CTMC or the masking process), never from the model —
//! nothing in this module can sample from a model.
//!
//! Every objective comes in two layers: `draw_*_batch` consumes RNG, and a
//! pure `*_loss_on_batch` maps a fixed batch to (loss, gradients). The
//! wrappers compose the two; tests hit the pure layer directly.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ctmc::{kernel_between, sample_state, Generator, ReferenceProcess};
use crate::data::SequenceSource;
use crate::error::Result;
use crate::masking::{corrupt, generator_target, sample_endpoint, MaskingConfig};
use crate::model::{
    dmf_prediction_on, seq_dmf_with_mid_logits_on, AlphaSchedule, ExactKernelNet, PosteriorNet,
    SequenceKernelNet,
};
use crate::model::params::ParamSet;
use crate::rng::SeedStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::training::sampler::TimeSampler;

/// Central-difference half-width used inside ∂_t K_θ during training.
pub const FD_STEP: f64 = 1e-3;

/// Scalar loss value plus per-parameter gradients, optimizer-ready.
pub type LossAndGrads = (f64, Vec<Vec<f64>>);

// ── Hybrid weight ──────────────────────────────────────────────────────────

/// CE weight λ for the hybrid objective. Kept as an enum because JSON has no
/// literal infinity; configs spell it as a number or the string "inf".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HybridWeight {
    Finite(f64),
    Infinite,
}

impl HybridWeight {
    pub fn from_f64(v: f64) -> Result<Self> {
        if v.is_nan() || v < 0.0 {
            return Err(crate::error::CoreError::invalid(format!(
                "hybrid weight must be a nonnegative real or infinity, got {v}"
            )));
        }
        Ok(if v.is_infinite() { HybridWeight::Infinite } else { HybridWeight::Finite(v) })
    }

    pub fn as_f64(self) -> f64 {
        match self {
            HybridWeight::Finite(v) => v,
            HybridWeight::Infinite => f64::INFINITY,
        }
    }

    /// Stable identifier for output paths and manifests ("0.1", "inf").
    pub fn label(self) -> String {
        match self {
            HybridWeight::Finite(v) => format!("{v}"),
            HybridWeight::Infinite => "inf".to_string(),
        }
    }
}

impl Serialize for HybridWeight {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            HybridWeight::Finite(v) => s.serialize_f64(*v),
            HybridWeight::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for HybridWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => HybridWeight::from_f64(v).map_err(D::Error::custom),
            Raw::Str(s) if s == "inf" || s == "infinity" => Ok(HybridWeight::Infinite),
            Raw::Str(s) => Err(D::Error::custom(format!(
                "hybrid weight: expected a number or \"inf\", got \"{s}\""
            ))),
        }
    }
}

// ── Batches ────────────────────────────────────────────────────────────────

/// Fixed draws for one exact-chain KR (or boundary-penalty) step.
#[derive(Debug, Clone)]
pub struct ExactBatch {
    pub xr: Vec<usize>,
    pub xt: Vec<usize>,
    pub rs: Vec<f64>,
    pub ts: Vec<f64>,
}

/// Per element: (r,t) from the sampler, x_r from the chain's marginal at r,
/// x_t from the oracle kernel column K_{r,t}(·, x_r).
pub fn draw_exact_batch(
    process: &ReferenceProcess,
    sampler: &TimeSampler,
    batch_size: usize,
    rng: &mut SeedStream,
) -> ExactBatch {
    let mut b = ExactBatch {
        xr: Vec::with_capacity(batch_size),
        xt: Vec::with_capacity(batch_size),
        rs: Vec::with_capacity(batch_size),
        ts: Vec::with_capacity(batch_size),
    };
    for _ in 0..batch_size {
        let (r, t) = sampler.sample(rng);
        let xr = process.marginal_state_at(r, rng);
        let k = kernel_between(&process.generator, r, t).expect("sampler emits valid intervals");
        let xt = sample_state(&k, xr, rng);
        b.xr.push(xr);
        b.xt.push(xt);
        b.rs.push(r);
        b.ts.push(t);
    }
    b
}

/// Fixed draws for one sequence KR/hybrid step. Token vectors are flat
/// batch × seq_len.
#[derive(Debug, Clone)]
pub struct SeqBatch {
    pub x1: Vec<usize>,
    pub xr: Vec<usize>,
    pub xt: Vec<usize>,
    pub rs: Vec<f64>,
    pub ts: Vec<f64>,
}

pub fn draw_seq_batch(
    source: &SequenceSource,
    cfg: &MaskingConfig,
    sampler: &TimeSampler,
    batch_size: usize,
    rng: &mut SeedStream,
) -> Result<SeqBatch> {
    let seqs = source.sample_batch(batch_size, rng)?;
    let d = cfg.seq_len;
    let mut b = SeqBatch {
        x1: Vec::with_capacity(batch_size * d),
        xr: Vec::with_capacity(batch_size * d),
        xt: Vec::with_capacity(batch_size * d),
        rs: Vec::with_capacity(batch_size),
        ts: Vec::with_capacity(batch_size),
    };
    for x1 in &seqs {
        let (r, t) = sampler.sample(rng);
        let xr = corrupt(cfg, x1, r, rng);
        let xt = sample_endpoint(cfg, &xr, x1, r, t, rng)?;
        b.x1.extend_from_slice(x1);
        b.xr.extend_from_slice(&xr);
        b.xt.extend_from_slice(&xt);
        b.rs.push(r);
        b.ts.push(t);
    }
    Ok(b)
}

/// Draws for one KCE step — like [`SeqBatch`] but without the endpoint,
/// which cross-entropy never looks at.
#[derive(Debug, Clone)]
pub struct CorruptedBatch {
    pub x1: Vec<usize>,
    pub xr: Vec<usize>,
    pub rs: Vec<f64>,
    pub ts: Vec<f64>,
}

pub fn draw_corrupted_batch(
    source: &SequenceSource,
    cfg: &MaskingConfig,
    sampler: &TimeSampler,
    batch_size: usize,
    rng: &mut SeedStream,
) -> Result<CorruptedBatch> {
    let seqs = source.sample_batch(batch_size, rng)?;
    let d = cfg.seq_len;
    let mut b = CorruptedBatch {
        x1: Vec::with_capacity(batch_size * d),
        xr: Vec::with_capacity(batch_size * d),
        rs: Vec::with_capacity(batch_size),
        ts: Vec::with_capacity(batch_size),
    };
    for x1 in &seqs {
        let (r, t) = sampler.sample(rng);
        let xr = corrupt(cfg, x1, r, rng);
        b.x1.extend_from_slice(x1);
        b.xr.extend_from_slice(&xr);
        b.rs.push(r);
        b.ts.push(t);
    }
    Ok(b)
}

/// Draws for one PR step: a single time per element, t ~ U[0, 1−ε).
#[derive(Debug, Clone)]
pub struct PosteriorBatch {
    pub x1: Vec<usize>,
    pub xt: Vec<usize>,
    pub ts: Vec<f64>,
}

pub fn draw_posterior_batch(
    source: &SequenceSource,
    cfg: &MaskingConfig,
    epsilon: f64,
    batch_size: usize,
    rng: &mut SeedStream,
) -> Result<PosteriorBatch> {
    let seqs = source.sample_batch(batch_size, rng)?;
    let d = cfg.seq_len;
    let mut b = PosteriorBatch {
        x1: Vec::with_capacity(batch_size * d),
        xt: Vec::with_capacity(batch_size * d),
        ts: Vec::with_capacity(batch_size),
    };
    for x1 in &seqs {
        let t = rng.uniform_in(0.0, 1.0 - epsilon);
        let xt = corrupt(cfg, x1, t, rng);
        b.x1.extend_from_slice(x1);
        b.xt.extend_from_slice(&xt);
        b.ts.push(t);
    }
    Ok(b)
}

// ── Shared graph pieces ────────────────────────────────────────────────────

/// sum((pred − target)²) / denom as a scalar node.
fn squared_error_node(
    tape: &mut Tape,
    pred: Var,
    shape: &[usize],
    target: Vec<f64>,
    denom: f64,
) -> Var {
    let tgt = tape.constant(Tensor::from_vec(shape, target));
    let neg = tape.scale(tgt, -1.0);
    let diff = tape.add(pred, neg);
    let sq = tape.mul(diff, diff);
    let tot = tape.sum_all(sq);
    tape.scale(tot, 1.0 / denom)
}

/// Mean cross-entropy at masked positions, as a one-hot contraction against
/// log-softmax: −(Σ log p[selected]) / n_masked + const_sum / n_masked.
///
/// `const_sum` carries per-position constants that live outside the graph
/// (the −log α of a mixture kernel). An empty selection yields an exact zero
/// with zero gradients.
fn masked_ce_node(
    tape: &mut Tape,
    logits: Var,
    shape: &[usize],
    mask_onehot: Vec<f64>,
    n_masked: usize,
    const_sum: f64,
) -> Var {
    let ls = tape.log_softmax_axis(logits, 2);
    let m = tape.constant(Tensor::from_vec(shape, mask_onehot));
    let picked = tape.mul(ls, m);
    let tot = tape.sum_all(picked);
    let denom = if n_masked == 0 { 0.0 } else { -1.0 / n_masked as f64 };
    let ce = tape.scale(tot, denom);
    if n_masked == 0 || const_sum == 0.0 {
        ce
    } else {
        let c = tape.constant(Tensor::scalar(const_sum / n_masked as f64));
        tape.add(ce, c)
    }
}

/// One-hot selector over [B, D, A] marking (masked position, clean token),
/// with Σ −log α_b over the same positions for mixture cross-entropy. The
/// mixture puts zero mass on the clean token through its δ part whenever the
/// input token is MASK, so CE of the mixture is CE of q plus −log α.
fn kernel_ce_inputs(
    cfg: &MaskingConfig,
    schedule: &AlphaSchedule,
    x1: &[usize],
    xr: &[usize],
    rs: &[f64],
    ts: &[f64],
) -> (Vec<f64>, usize, f64) {
    let (d, a) = (cfg.seq_len, cfg.alphabet());
    let bsz = rs.len();
    let mask = cfg.mask_token();
    let mut onehot = vec![0.0; bsz * d * a];
    let mut n_masked = 0usize;
    let mut const_sum = 0.0;
    for i in 0..bsz {
        let neg_log_alpha = -schedule.alpha(rs[i], ts[i]).ln();
        for p in 0..d {
            if xr[i * d + p] == mask {
                onehot[(i * d + p) * a + x1[i * d + p]] = 1.0;
                n_masked += 1;
                const_sum += neg_log_alpha;
            }
        }
    }
    (onehot, n_masked, const_sum)
}

/// Read the scalar, backprop, collect parameter gradients.
fn finish(tape: &mut Tape, params: &ParamSet, vars: &[Var], loss: Var) -> LossAndGrads {
    let value = tape.value(loss)[0];
    tape.backward(loss);
    (value, params.gradients(tape, vars))
}

// ── Exact-chain objectives ─────────────────────────────────────────────────

/// KR on a fixed exact batch: mean over the batch of
/// Σ_y (∂_t K_θ(y, x_r, r, t) − Q(y, x_t))².
pub fn kr_exact_loss_on_batch(
    net: &ExactKernelNet,
    schedule: &AlphaSchedule,
    q: &Generator,
    batch: &ExactBatch,
    fd_step: f64,
) -> LossAndGrads {
    let bsz = batch.rs.len();
    let s = q.n_states();
    debug_assert_eq!(net.n_states(), s, "model and generator state spaces differ");
    let mut target = vec![0.0; bsz * s];
    for i in 0..bsz {
        for y in 0..s {
            target[i * s + y] = q.rate(y, batch.xt[i]);
        }
    }
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, true);
    let pred = dmf_prediction_on(
        &mut tape, net, &vars, schedule, &batch.xr, &batch.rs, &batch.ts, fd_step,
    );
    let loss = squared_error_node(&mut tape, pred, &[bsz, s], target, bsz as f64);
    finish(&mut tape, net.params(), &vars, loss)
}

/// Draw a batch and evaluate exact-chain KR.
pub fn kr_loss_exact(
    net: &ExactKernelNet,
    schedule: &AlphaSchedule,
    process: &ReferenceProcess,
    sampler: &TimeSampler,
    batch_size: usize,
    fd_step: f64,
    rng: &mut SeedStream,
) -> LossAndGrads {
    let batch = draw_exact_batch(process, sampler, batch_size, rng);
    kr_exact_loss_on_batch(net, schedule, &process.generator, &batch, fd_step)
}

/// Ablation baseline: pure-softmax kernel (no mixture), central-difference
/// time derivative, and λ_bdy · mean‖K(·, x_r, r, r) − δ_{x_r}‖² added so the
/// identity boundary must be learned instead of being structural. Three time
/// slices (t−h, t+h, r) share one stacked forward.
pub fn boundary_penalty_loss_on_batch(
    net: &ExactKernelNet,
    q: &Generator,
    batch: &ExactBatch,
    lambda_bdy: f64,
    fd_step: f64,
) -> LossAndGrads {
    let bsz = batch.rs.len();
    let s = q.n_states();
    assert!(lambda_bdy >= 0.0 && fd_step > 0.0);

    let mut xs = Vec::with_capacity(3 * bsz);
    let mut rs3 = Vec::with_capacity(3 * bsz);
    let mut ts3 = Vec::with_capacity(3 * bsz);
    let mut inv_gap = vec![0.0; bsz * s];
    for pass in 0..3 {
        for i in 0..bsz {
            let (t_lo, t_hi) = crate::model::exact::fd_times(batch.ts[i], fd_step);
            xs.push(batch.xr[i]);
            rs3.push(batch.rs[i]);
            ts3.push(match pass {
                0 => t_lo,
                1 => t_hi,
                _ => batch.rs[i], // boundary slice
            });
            if pass == 0 {
                inv_gap[i * s..(i + 1) * s].fill(1.0 / (t_hi - t_lo));
            }
        }
    }

    let mut target = vec![0.0; bsz * s];
    let mut delta = vec![0.0; bsz * s];
    for i in 0..bsz {
        for y in 0..s {
            target[i * s + y] = q.rate(y, batch.xt[i]);
        }
        delta[i * s + batch.xr[i]] = 1.0;
    }

    let mut tape = Tape::new();
    let vars = net.register(&mut tape, true);
    let input = tape.constant(net.input_features(&xs, &rs3, &ts3));
    let logits = net.logits_on(&mut tape, &vars, input);
    let k = tape.softmax_axis(logits, 1); // [3B, S]
    let k_lo = tape.narrow(k, 0, 0, bsz);
    let k_hi = tape.narrow(k, 0, bsz, bsz);
    let k_rr = tape.narrow(k, 0, 2 * bsz, bsz);

    let inv = tape.constant(Tensor::from_vec(&[bsz, s], inv_gap));
    let neg_lo = tape.scale(k_lo, -1.0);
    let spread = tape.add(k_hi, neg_lo);
    let fd = tape.mul(spread, inv);

    let kr = squared_error_node(&mut tape, fd, &[bsz, s], target, bsz as f64);
    let loss = if lambda_bdy == 0.0 {
        kr
    } else {
        let pen = squared_error_node(&mut tape, k_rr, &[bsz, s], delta, bsz as f64);
        let pen_scaled = tape.scale(pen, lambda_bdy);
        tape.add(kr, pen_scaled)
    };
    finish(&mut tape, net.params(), &vars, loss)
}

/// Draw a batch and evaluate the boundary-penalty objective.
pub fn boundary_penalty_loss(
    net: &ExactKernelNet,
    process: &ReferenceProcess,
    sampler: &TimeSampler,
    batch_size: usize,
    lambda_bdy: f64,
    fd_step: f64,
    rng: &mut SeedStream,
) -> LossAndGrads {
    let batch = draw_exact_batch(process, sampler, batch_size, rng);
    boundary_penalty_loss_on_batch(net, &process.generator, &batch, lambda_bdy, fd_step)
}

// ── Sequence objectives ────────────────────────────────────────────────────

/// KR + λ·CE on a fixed sequence batch. λ = 0 skips the CE term entirely
/// (bit-identical to plain sequence KR); λ = ∞ skips the KR term and its
/// stacked three-slice forward, leaving cross-entropy alone.
pub fn hybrid_seq_loss_on_batch(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    cfg: &MaskingConfig,
    batch: &SeqBatch,
    lambda: HybridWeight,
    fd_step: f64,
) -> Result<LossAndGrads> {
    let bsz = batch.rs.len();
    let (d, a) = (cfg.seq_len, cfg.alphabet());
    debug_assert_eq!(net.vocab_size(), cfg.vocab_size);

    let mut tape = Tape::new();
    let vars = net.register(&mut tape, true);
    let loss = match lambda {
        HybridWeight::Finite(l) => {
            let (pred, mid_logits) = seq_dmf_with_mid_logits_on(
                &mut tape, net, &vars, schedule, &batch.xr, &batch.rs, &batch.ts, fd_step,
            );
            let mut target = Vec::with_capacity(bsz * d * a);
            for i in 0..bsz {
                let g = generator_target(
                    cfg,
                    &batch.xt[i * d..(i + 1) * d],
                    &batch.x1[i * d..(i + 1) * d],
                    batch.ts[i],
                )?;
                target.extend_from_slice(&g);
            }
            let kr =
                squared_error_node(&mut tape, pred, &[bsz, d, a], target, (bsz * d) as f64);
            if l == 0.0 {
                kr
            } else {
                let (onehot, n_masked, const_sum) =
                    kernel_ce_inputs(cfg, schedule, &batch.x1, &batch.xr, &batch.rs, &batch.ts);
                let ce = masked_ce_node(
                    &mut tape, mid_logits, &[bsz, d, a], onehot, n_masked, const_sum,
                );
                let ce_weighted = tape.scale(ce, l);
                tape.add(kr, ce_weighted)
            }
        }
        HybridWeight::Infinite => {
            let logits = net.logits_on(&mut tape, &vars, &batch.xr, &batch.rs, &batch.ts);
            let (onehot, n_masked, const_sum) =
                kernel_ce_inputs(cfg, schedule, &batch.x1, &batch.xr, &batch.rs, &batch.ts);
            masked_ce_node(&mut tape, logits, &[bsz, d, a], onehot, n_masked, const_sum)
        }
    };
    Ok(finish(&mut tape, net.params(), &vars, loss))
}

/// Plain sequence KR — the hybrid objective at λ = 0.
pub fn kr_seq_loss_on_batch(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    cfg: &MaskingConfig,
    batch: &SeqBatch,
    fd_step: f64,
) -> Result<LossAndGrads> {
    hybrid_seq_loss_on_batch(net, schedule, cfg, batch, HybridWeight::Finite(0.0), fd_step)
}

/// Draw a batch and evaluate sequence KR.
#[allow(clippy::too_many_arguments)]
pub fn kr_loss_seq(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    source: &SequenceSource,
    cfg: &MaskingConfig,
    sampler: &TimeSampler,
    batch_size: usize,
    fd_step: f64,
    rng: &mut SeedStream,
) -> Result<LossAndGrads> {
    let batch = draw_seq_batch(source, cfg, sampler, batch_size, rng)?;
    kr_seq_loss_on_batch(net, schedule, cfg, &batch, fd_step)
}

/// Draw a batch and evaluate the hybrid objective. The draw pattern is
/// identical for every λ (endpoints are drawn even when λ = ∞ ignores them),
/// so sweep runs with equal seeds see equal batches.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_loss(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    source: &SequenceSource,
    cfg: &MaskingConfig,
    sampler: &TimeSampler,
    batch_size: usize,
    lambda: HybridWeight,
    fd_step: f64,
    rng: &mut SeedStream,
) -> Result<LossAndGrads> {
    let batch = draw_seq_batch(source, cfg, sampler, batch_size, rng)?;
    hybrid_seq_loss_on_batch(net, schedule, cfg, &batch, lambda, fd_step)
}

/// KCE on a fixed corrupted batch: cross-entropy of the mixture kernel's
/// t-slice against clean tokens at masked positions. The mixture's δ part
/// contributes nothing at a masked input position (MASK ≠ clean token), so
/// log K(x_1) = log α + log q(x_1); the −log α enters as a graph constant.
pub fn kce_loss_on_batch(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    cfg: &MaskingConfig,
    batch: &CorruptedBatch,
) -> LossAndGrads {
    let bsz = batch.rs.len();
    let (d, a) = (cfg.seq_len, cfg.alphabet());
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, true);
    let logits = net.logits_on(&mut tape, &vars, &batch.xr, &batch.rs, &batch.ts);
    let (onehot, n_masked, const_sum) =
        kernel_ce_inputs(cfg, schedule, &batch.x1, &batch.xr, &batch.rs, &batch.ts);
    let loss = masked_ce_node(&mut tape, logits, &[bsz, d, a], onehot, n_masked, const_sum);
    finish(&mut tape, net.params(), &vars, loss)
}

/// Draw a batch and evaluate KCE.
pub fn kce_loss(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    source: &SequenceSource,
    cfg: &MaskingConfig,
    sampler: &TimeSampler,
    batch_size: usize,
    rng: &mut SeedStream,
) -> Result<LossAndGrads> {
    let batch = draw_corrupted_batch(source, cfg, sampler, batch_size, rng)?;
    Ok(kce_loss_on_batch(net, schedule, cfg, &batch))
}

/// PR on a fixed posterior batch: cross-entropy of posterior rows against
/// clean tokens at masked positions; zero when nothing is masked.
pub fn pr_loss_on_batch(
    net: &PosteriorNet,
    cfg: &MaskingConfig,
    batch: &PosteriorBatch,
) -> LossAndGrads {
    let bsz = batch.ts.len();
    let (d, a) = (cfg.seq_len, cfg.alphabet());
    let mask = cfg.mask_token();
    let mut onehot = vec![0.0; bsz * d * a];
    let mut n_masked = 0usize;
    for i in 0..bsz {
        for p in 0..d {
            if batch.xt[i * d + p] == mask {
                onehot[(i * d + p) * a + batch.x1[i * d + p]] = 1.0;
                n_masked += 1;
            }
        }
    }
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, true);
    let logits = net.logits_on(&mut tape, &vars, &batch.xt, &batch.ts);
    let loss = masked_ce_node(&mut tape, logits, &[bsz, d, a], onehot, n_masked, 0.0);
    finish(&mut tape, net.params(), &vars, loss)
}

/// Draw a batch and evaluate PR.
pub fn pr_loss(
    net: &PosteriorNet,
    source: &SequenceSource,
    cfg: &MaskingConfig,
    epsilon: f64,
    batch_size: usize,
    rng: &mut SeedStream,
) -> Result<LossAndGrads> {
    let batch = draw_posterior_batch(source, cfg, epsilon, batch_size, rng)?;
    Ok(pr_loss_on_batch(net, cfg, &batch))
}

// ── Tests ──────────────────────────────────────────────────────────────────
