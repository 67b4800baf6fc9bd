//! The kernel network for exact (small-state-space) chains, and the mixture
//! kernel built on top of it.
//!
//! The network is a plain 4-layer GELU MLP: one-hot state ⧺ time features of
//! r ⧺ time features of t → |S| logits. The learned kernel is
//!
//! ```text
//! K_θ(·, x, r, t) = (1−α(r,t))·δ_x + α(r,t)·softmax(f_θ(x, r, t))
//! ```
//!
//! so it is a simplex point for *any* parameter values and collapses to an
//! exact point mass at t = r. Its time derivative combines the analytic ∂_t α
//! with a finite difference of the softmax head in t; both FD evaluation
//! points stay inside the graph, so training gradients flow through them.

use crate::error::{CoreError, Result};
use crate::model::alpha::AlphaSchedule;
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
use crate::model::embed::sinusoidal_into;
use crate::model::params::{linear_bias, linear_weight, zeros, ParamSet};
use crate::rng::SeedStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use std::path::Path;

const HIDDEN: usize = 128;
const N_LAYERS: usize = 4;
/// Per-time-variable feature width (r and t each get this many).
pub const TIME_FEATURES_EXACT: usize = 32;
const CHECKPOINT_KIND: &str = "exact-kernel";

#[derive(Debug)]
pub struct ExactKernelNet {
    n_states: usize,
    seed: u64,
    params: ParamSet,
    weights: [usize; N_LAYERS],
    biases: [usize; N_LAYERS],
}

impl ExactKernelNet {
    /// Deterministic initialization. Hidden layers use fan-in-scaled uniform
    /// weights; the output head starts at zero so the untrained softmax is
    /// uniform.
    pub fn new(n_states: usize, seed: u64) -> Result<Self> {
        if n_states < 2 {
            return Err(CoreError::invalid(format!(
                "exact kernel net: need ≥ 2 states, got {n_states}"
            )));
        }
        let mut rng = SeedStream::derive(seed, "model/exact-kernel/init");
        let in_dim = n_states + 2 * TIME_FEATURES_EXACT;
        let dims = [in_dim, HIDDEN, HIDDEN, HIDDEN, n_states];
        let mut params = ParamSet::new();
        let mut weights = [0usize; N_LAYERS];
        let mut biases = [0usize; N_LAYERS];
        for l in 0..N_LAYERS {
            let (fan_out, fan_in) = (dims[l + 1], dims[l]);
            let last = l == N_LAYERS - 1;
            let w = if last {
                zeros(vec![fan_out, fan_in])
            } else {
                linear_weight(&mut rng, fan_out, fan_in)
            };
            let b = if last { zeros(vec![fan_out]) } else { linear_bias(&mut rng, fan_out, fan_in) };
            weights[l] = params.add(&format!("layer{l}.weight"), w);
            biases[l] = params.add(&format!("layer{l}.bias"), b);
        }
        Ok(ExactKernelNet { n_states, seed, params, weights, biases })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params.register(tape, trainable)
    }

    /// Input rows: one-hot(x) ⧺ features(r) ⧺ features(t).
    pub fn input_features(&self, xs: &[usize], rs: &[f64], ts: &[f64]) -> Tensor {
        assert!(
            xs.len() == rs.len() && rs.len() == ts.len(),
            "input_features: batch lengths differ ({}, {}, {})",
            xs.len(),
            rs.len(),
            ts.len()
        );
        let in_dim = self.n_states + 2 * TIME_FEATURES_EXACT;
        let mut data = vec![0.0; xs.len() * in_dim];
        for (i, ((&x, &r), &t)) in xs.iter().zip(rs).zip(ts).enumerate() {
            assert!(x < self.n_states, "input_features: state {x} out of range");
            let row = &mut data[i * in_dim..(i + 1) * in_dim];
            row[x] = 1.0;
            sinusoidal_into(r, &mut row[self.n_states..self.n_states + TIME_FEATURES_EXACT]);
            sinusoidal_into(t, &mut row[self.n_states + TIME_FEATURES_EXACT..]);
        }
        Tensor::from_vec(&[xs.len(), in_dim], data)
    }

    /// MLP forward on an existing tape; `input` is [B, in_dim], result
    /// [B, |S|] logits.
    pub fn logits_on(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Var {
        let mut h = input;
        for l in 0..N_LAYERS {
            h = tape.matmul_t(h, false, vars[self.weights[l]], true);
            h = tape.add(h, vars[self.biases[l]]);
            if l + 1 < N_LAYERS {
                h = tape.gelu(h);
            }
        }
        h
    }

    /// Softmax head rows q_θ(·|x_i, r_i, t_i), flat [B·|S|] — inference only.
    pub fn q_rows(&self, xs: &[usize], rs: &[f64], ts: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let input = tape.constant(self.input_features(xs, rs, ts));
        let logits = self.logits_on(&mut tape, &vars, input);
        let q = tape.softmax_axis(logits, 1);
        tape.value(q).to_vec()
    }

    pub fn save(&self, path: &Path, schedule: Option<&AlphaSchedule>) -> Result<()> {
        let header = CheckpointHeader {
            kind: CHECKPOINT_KIND.to_string(),
            seed: self.seed,
            schedule: schedule.copied(),
            meta: serde_json::json!({ "n_states": self.n_states }),
        };
        let named: Vec<(&str, &Tensor)> = self.params.named().collect();
        save_checkpoint(path, &header, &named)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<AlphaSchedule>)> {
        let (header, tensors) = load_checkpoint(path)?;
        if header.kind != CHECKPOINT_KIND {
            return Err(CoreError::Checkpoint(format!(
                "checkpoint kind {:?} is not an exact kernel model",
                header.kind
            )));
        }
        let n_states = header
            .meta
            .get("n_states")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CoreError::Checkpoint("header missing n_states".into()))?
            as usize;
        let mut net = ExactKernelNet::new(n_states, header.seed)?;
        net.params.load_named(tensors)?;
        Ok((net, header.schedule))
    }
}

// ── Kernel assembly ───────────────────────────────────────────────────────

/// K_θ(·, x, r, t) as a plain vector. Exactly δ_x at t = r: α(r,r) = 0 and
/// 0·q + 1·δ has no rounding.
pub fn kernel_column(
    net: &ExactKernelNet,
    schedule: &AlphaSchedule,
    x: usize,
    r: f64,
    t: f64,
) -> Vec<f64> {
    kernel_columns_batch(net, schedule, &[x], &[r], &[t]).pop().expect("one column")
}

/// Batched kernel columns — one forward pass for many (x, r, t) triples.
pub fn kernel_columns_batch(
    net: &ExactKernelNet,
    schedule: &AlphaSchedule,
    xs: &[usize],
    rs: &[f64],
    ts: &[f64],
) -> Vec<Vec<f64>> {
    let s = net.n_states();
    let q = net.q_rows(xs, rs, ts);
    xs.iter()
        .zip(rs.iter().zip(ts))
        .enumerate()
        .map(|(i, (&x, (&r, &t)))| {
            let a = schedule.alpha(r, t);
            let mut col: Vec<f64> = q[i * s..(i + 1) * s].iter().map(|&qy| a * qy).collect();
            col[x] += 1.0 - a;
            col
        })
        .collect()
}

/// The unconstrained ablation kernel: softmax(f_θ) with no mixture, so the
/// boundary must be *learned* (via a penalty) rather than built in.
pub fn unconstrained_kernel_column(net: &ExactKernelNet, x: usize, r: f64, t: f64) -> Vec<f64> {
    net.q_rows(&[x], &[r], &[t])
}

/// Finite-difference evaluation times for ∂_t q at t: central of step `h`,
/// one-sided against whichever interval edge is closer than h.
pub(crate) fn fd_times(t: f64, h: f64) -> (f64, f64) {
    ((t - h).max(0.0), (t + h).min(1.0))
}

/// Build ∂_t K_θ rows [B, |S|] on a tape:
///
/// ```text
/// ∂_t K_θ = (∂_t α)(q_θ(t) − δ_x) + α·(q_θ(t_hi) − q_θ(t_lo))/(t_hi − t_lo)
/// ```
///
/// All three time slices go through one stacked forward pass; gradients flow
/// through every evaluation point.
pub fn dmf_prediction_on(
    tape: &mut Tape,
    net: &ExactKernelNet,
    vars: &[Var],
    schedule: &AlphaSchedule,
    xs: &[usize],
    rs: &[f64],
    ts: &[f64],
    fd_step: f64,
) -> Var {
    let b = xs.len();
    assert!(b > 0 && rs.len() == b && ts.len() == b, "dmf_prediction_on: bad batch");
    assert!(fd_step > 0.0, "dmf_prediction_on: fd_step must be > 0, got {fd_step}");
    let s = net.n_states();

    let mut stacked_x = Vec::with_capacity(3 * b);
    let mut stacked_r = Vec::with_capacity(3 * b);
    let mut stacked_t = Vec::with_capacity(3 * b);
    let mut dalpha_rows = vec![0.0; b * s];
    let mut alpha_over_div = vec![0.0; b * s];
    let mut neg_delta = vec![0.0; b * s];
    for pass in 0..3 {
        for i in 0..b {
            let (t_lo, t_hi) = fd_times(ts[i], fd_step);
            stacked_x.push(xs[i]);
            stacked_r.push(rs[i]);
            stacked_t.push(match pass {
                0 => t_lo,
                1 => ts[i],
                _ => t_hi,
            });
            if pass == 0 {
                let row = i * s;
                dalpha_rows[row..row + s].fill(schedule.dalpha_dt(rs[i], ts[i]));
                alpha_over_div[row..row + s]
                    .fill(schedule.alpha(rs[i], ts[i]) / (t_hi - t_lo));
                neg_delta[row + xs[i]] = -1.0;
            }
        }
    }

    let input = tape.constant(net.input_features(&stacked_x, &stacked_r, &stacked_t));
    let logits = net.logits_on(tape, vars, input);
    let q = tape.softmax_axis(logits, 1);
    let q_lo = tape.narrow(q, 0, 0, b);
    let q_mid = tape.narrow(q, 0, b, b);
    let q_hi = tape.narrow(q, 0, 2 * b, b);

    let neg_delta_c = tape.constant(Tensor::from_vec(&[b, s], neg_delta));
    let dalpha_c = tape.constant(Tensor::from_vec(&[b, s], dalpha_rows));
    let ratio_c = tape.constant(Tensor::from_vec(&[b, s], alpha_over_div));

    let centered = tape.add(q_mid, neg_delta_c);
    let term_boundary = tape.mul(centered, dalpha_c);
    let neg_q_lo = tape.scale(q_lo, -1.0);
    let spread = tape.add(q_hi, neg_q_lo);
    let term_fd = tape.mul(spread, ratio_c);
    tape.add(term_boundary, term_fd)
}

/// ∂_t K_θ(·, x, r, t) as a plain vector — the inference-side view of the
/// same decomposition the training loss differentiates through.
pub fn kernel_time_derivative(
    net: &ExactKernelNet,
    schedule: &AlphaSchedule,
    x: usize,
    r: f64,
    t: f64,
    h: f64,
) -> Vec<f64> {
    assert!(r < t, "kernel_time_derivative: need r < t, got ({r}, {t})");
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, false);
    let pred = dmf_prediction_on(&mut tape, net, &vars, schedule, &[x], &[r], &[t], h);
    tape.value(pred).to_vec()
}
