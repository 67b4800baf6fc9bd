//! Sequence models: a shared bidirectional Transformer backbone behind two
//! heads of use.
//!
//! `SequenceKernelNet` conditions on the interval (r, t) and parameterizes a
//! per-position mixture kernel over V ∪ {MASK} — boundary-exact at t = r by
//! the same α-mixture as the exact model, factorized across positions.
//! `PosteriorNet` is the single-time baseline: identical backbone, one time
//! input, and the MASK logit suppressed at readout so it predicts clean
//! tokens only. The two differ *only* in the time-projection fan-in, keeping
//! parameter counts within a few percent of each other.

use crate::error::{CoreError, Result};
use crate::model::alpha::AlphaSchedule;
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
use crate::model::embed::sinusoidal_into;
use crate::model::exact::fd_times;
use crate::model::params::{embedding_init, linear_bias, linear_weight, ones, zeros, ParamSet};
use crate::rng::SeedStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use std::path::Path;

const D_MODEL: usize = 128;
const N_HEADS: usize = 4;
const HEAD_DIM: usize = D_MODEL / N_HEADS;
const N_BLOCKS: usize = 3;
const D_FF: usize = 4 * D_MODEL;
const LN_EPS: f64 = 1e-5;
/// Feature width per time variable fed to the time projection.
pub const TIME_FEATURES_SEQ: usize = 128;
/// Added to the MASK logit at the posterior readout; exp(−1e30 − m) is a
/// hard 0 for any realistic logit scale, so MASK gets exactly zero mass.
const MASK_LOGIT_BIAS: f64 = -1e30;

const SEQ_KIND: &str = "sequence-kernel";
const POSTERIOR_KIND: &str = "posterior";

// ── Backbone ──────────────────────────────────────────────────────────────

struct BlockIdx {
    ln1_g: usize,
    ln1_b: usize,
    wqkv: usize,
    bqkv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    wff1: usize,
    bff1: usize,
    wff2: usize,
    bff2: usize,
}

struct Backbone {
    vocab_size: usize,
    seq_len: usize,
    time_in: usize,
    seed: u64,
    params: ParamSet,
    tok_emb: usize,
    pos_emb: usize,
    time_w: usize,
    time_b: usize,
    blocks: Vec<BlockIdx>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
}

impl Backbone {
    fn new(vocab_size: usize, seq_len: usize, time_in: usize, seed: u64, label: &str) -> Result<Self> {
        if vocab_size < 2 || seq_len == 0 {
            return Err(CoreError::invalid(format!(
                "sequence model: need vocab_size ≥ 2 and seq_len ≥ 1, got ({vocab_size}, {seq_len})"
            )));
        }
        let alphabet = vocab_size + 1; // clean tokens plus MASK
        let mut rng = SeedStream::derive(seed, label);
        let mut p = ParamSet::new();
        let tok_emb = p.add("token_embedding", embedding_init(&mut rng, alphabet, D_MODEL));
        let pos_emb = p.add("position_embedding", embedding_init(&mut rng, seq_len, D_MODEL));
        let time_w = p.add("time_proj.weight", linear_weight(&mut rng, D_MODEL, time_in));
        let time_b = p.add("time_proj.bias", linear_bias(&mut rng, D_MODEL, time_in));
        let mut blocks = Vec::with_capacity(N_BLOCKS);
        for i in 0..N_BLOCKS {
            blocks.push(BlockIdx {
                ln1_g: p.add(&format!("block{i}.ln1.gamma"), ones(vec![D_MODEL])),
                ln1_b: p.add(&format!("block{i}.ln1.beta"), zeros(vec![D_MODEL])),
                wqkv: p.add(
                    &format!("block{i}.attn.qkv.weight"),
                    linear_weight(&mut rng, 3 * D_MODEL, D_MODEL),
                ),
                bqkv: p.add(
                    &format!("block{i}.attn.qkv.bias"),
                    linear_bias(&mut rng, 3 * D_MODEL, D_MODEL),
                ),
                wo: p.add(
                    &format!("block{i}.attn.out.weight"),
                    linear_weight(&mut rng, D_MODEL, D_MODEL),
                ),
                bo: p.add(
                    &format!("block{i}.attn.out.bias"),
                    linear_bias(&mut rng, D_MODEL, D_MODEL),
                ),
                ln2_g: p.add(&format!("block{i}.ln2.gamma"), ones(vec![D_MODEL])),
                ln2_b: p.add(&format!("block{i}.ln2.beta"), zeros(vec![D_MODEL])),
                wff1: p.add(
                    &format!("block{i}.ff1.weight"),
                    linear_weight(&mut rng, D_FF, D_MODEL),
                ),
                bff1: p.add(&format!("block{i}.ff1.bias"), linear_bias(&mut rng, D_FF, D_MODEL)),
                wff2: p.add(
                    &format!("block{i}.ff2.weight"),
                    linear_weight(&mut rng, D_MODEL, D_FF),
                ),
                bff2: p.add(&format!("block{i}.ff2.bias"), linear_bias(&mut rng, D_MODEL, D_FF)),
            });
        }
        let lnf_g = p.add("final_norm.gamma", ones(vec![D_MODEL]));
        let lnf_b = p.add("final_norm.beta", zeros(vec![D_MODEL]));
        // zero head: the untrained per-position softmax is uniform
        let head_w = p.add("head.weight", zeros(vec![alphabet, D_MODEL]));
        let head_b = p.add("head.bias", zeros(vec![alphabet]));
        Ok(Backbone {
            vocab_size,
            seq_len,
            time_in,
            seed,
            params: p,
            tok_emb,
            pos_emb,
            time_w,
            time_b,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
        })
    }

    fn linear(&self, tape: &mut Tape, vars: &[Var], x: Var, w: usize, b: usize) -> Var {
        let y = tape.matmul_t(x, false, vars[w], true);
        tape.add(y, vars[b])
    }

    /// Pre-LN Transformer forward. `ids` is the flattened [B, D] token grid;
    /// `time_feats` is [B, time_in]. Returns [B, D, |V|+1] logits.
    fn forward_logits(&self, tape: &mut Tape, vars: &[Var], ids: &[usize], time_feats: Tensor) -> Var {
        let b = time_feats.shape[0];
        let d = self.seq_len;
        assert_eq!(
            ids.len(),
            b * d,
            "sequence length mismatch: {} ids for batch {b} × seq_len {d}",
            ids.len()
        );
        assert_eq!(time_feats.shape, vec![b, self.time_in], "time feature shape mismatch");
        let alphabet = self.vocab_size + 1;

        let tok = tape.embedding(vars[self.tok_emb], ids); // [B*D, dm]
        let tok3 = tape.reshape(tok, &[b, d, D_MODEL]);
        let mut x = tape.add(tok3, vars[self.pos_emb]); // [D, dm] broadcast

        // time conditioning, projected and added to every position
        let tf = tape.constant(time_feats);
        let tp = self.linear(tape, vars, tf, self.time_w, self.time_b); // [B, dm]
        let tp3 = tape.reshape(tp, &[b, 1, D_MODEL]);
        let spread = tape.constant(Tensor::from_vec(&[b, d, 1], vec![1.0; b * d]));
        let tcast = tape.matmul(spread, tp3); // [B, D, dm]
        x = tape.add(x, tcast);

        for blk in &self.blocks {
            // self-attention sublayer
            let h = tape.layer_norm(x, vars[blk.ln1_g], vars[blk.ln1_b], LN_EPS);
            let h2 = tape.reshape(h, &[b * d, D_MODEL]);
            let qkv = self.linear(tape, vars, h2, blk.wqkv, blk.bqkv); // [B*D, 3dm]
            let qkv3 = tape.reshape(qkv, &[b, d, 3 * D_MODEL]);
            let heads = |tape: &mut Tape, part: Var| {
                let p4 = tape.reshape(part, &[b, d, N_HEADS, HEAD_DIM]);
                let p4 = tape.permute(p4, &[0, 2, 1, 3]); // [B, H, D, dh]
                tape.reshape(p4, &[b * N_HEADS, d, HEAD_DIM])
            };
            let q = tape.narrow(qkv3, 2, 0, D_MODEL);
            let q = heads(tape, q);
            let k = tape.narrow(qkv3, 2, D_MODEL, D_MODEL);
            let k = heads(tape, k);
            let v = tape.narrow(qkv3, 2, 2 * D_MODEL, D_MODEL);
            let v = heads(tape, v);
            let scores = tape.matmul_t(q, false, k, true); // [B*H, D, D]
            let scores = tape.scale(scores, 1.0 / (HEAD_DIM as f64).sqrt());
            let attn = tape.softmax_axis(scores, 2); // bidirectional: no mask
            let ctx = tape.matmul(attn, v); // [B*H, D, dh]
            let ctx = tape.reshape(ctx, &[b, N_HEADS, d, HEAD_DIM]);
            let ctx = tape.permute(ctx, &[0, 2, 1, 3]); // [B, D, H, dh]
            let ctx2 = tape.reshape(ctx, &[b * d, D_MODEL]);
            let proj = self.linear(tape, vars, ctx2, blk.wo, blk.bo);
            let proj3 = tape.reshape(proj, &[b, d, D_MODEL]);
            x = tape.add(x, proj3);

            // feed-forward sublayer
            let h = tape.layer_norm(x, vars[blk.ln2_g], vars[blk.ln2_b], LN_EPS);
            let h2 = tape.reshape(h, &[b * d, D_MODEL]);
            let f = self.linear(tape, vars, h2, blk.wff1, blk.bff1);
            let f = tape.gelu(f);
            let f = self.linear(tape, vars, f, blk.wff2, blk.bff2);
            let f3 = tape.reshape(f, &[b, d, D_MODEL]);
            x = tape.add(x, f3);
        }

        let xn = tape.layer_norm(x, vars[self.lnf_g], vars[self.lnf_b], LN_EPS);
        let x2 = tape.reshape(xn, &[b * d, D_MODEL]);
        let logits = self.linear(tape, vars, x2, self.head_w, self.head_b);
        tape.reshape(logits, &[b, d, alphabet])
    }

    fn save(&self, path: &Path, kind: &str, schedule: Option<&AlphaSchedule>) -> Result<()> {
        let header = CheckpointHeader {
            kind: kind.to_string(),
            seed: self.seed,
            schedule: schedule.copied(),
            meta: serde_json::json!({
                "vocab_size": self.vocab_size,
                "seq_len": self.seq_len,
            }),
        };
        let named: Vec<(&str, &Tensor)> = self.params.named().collect();
        save_checkpoint(path, &header, &named)
    }

    fn load(
        path: &Path,
        kind: &str,
        time_in: usize,
        label: &str,
    ) -> Result<(Self, Option<AlphaSchedule>)> {
        let (header, tensors) = load_checkpoint(path)?;
        if header.kind != kind {
            return Err(CoreError::Checkpoint(format!(
                "checkpoint kind {:?} does not match expected {kind:?}",
                header.kind
            )));
        }
        let field = |name: &str| {
            header.meta.get(name).and_then(|v| v.as_u64()).map(|v| v as usize).ok_or_else(|| {
                CoreError::Checkpoint(format!("header missing {name}"))
            })
        };
        let mut bb = Backbone::new(field("vocab_size")?, field("seq_len")?, time_in, header.seed, label)?;
        bb.params.load_named(tensors)?;
        Ok((bb, header.schedule))
    }
}

// ── Interval-conditioned kernel model ─────────────────────────────────────

pub struct SequenceKernelNet {
    bb: Backbone,
}

impl SequenceKernelNet {
    pub fn new(vocab_size: usize, seq_len: usize, seed: u64) -> Result<Self> {
        let bb =
            Backbone::new(vocab_size, seq_len, 2 * TIME_FEATURES_SEQ, seed, "model/sequence-kernel/init")?;
        Ok(SequenceKernelNet { bb })
    }

    pub fn vocab_size(&self) -> usize {
        self.bb.vocab_size
    }

    pub fn seq_len(&self) -> usize {
        self.bb.seq_len
    }

    pub fn mask_token(&self) -> usize {
        self.bb.vocab_size
    }

    pub fn seed(&self) -> u64 {
        self.bb.seed
    }

    pub fn param_count(&self) -> usize {
        self.bb.params.total_len()
    }

    pub fn params(&self) -> &ParamSet {
        &self.bb.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.bb.params
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.bb.params.register(tape, trainable)
    }

    fn time_features(&self, rs: &[f64], ts: &[f64]) -> Tensor {
        assert_eq!(rs.len(), ts.len());
        let w = TIME_FEATURES_SEQ;
        let mut data = vec![0.0; rs.len() * 2 * w];
        for (i, (&r, &t)) in rs.iter().zip(ts).enumerate() {
            let row = &mut data[i * 2 * w..(i + 1) * 2 * w];
            sinusoidal_into(r, &mut row[..w]);
            sinusoidal_into(t, &mut row[w..]);
        }
        Tensor::from_vec(&[rs.len(), 2 * w], data)
    }

    /// Logits [B, D, |V|+1] for flattened token ids and per-element (r, t).
    pub fn logits_on(&self, tape: &mut Tape, vars: &[Var], ids: &[usize], rs: &[f64], ts: &[f64]) -> Var {
        let feats = self.time_features(rs, ts);
        self.bb.forward_logits(tape, vars, ids, feats)
    }

    /// Softmax rows for a batch of sequences at shared (r, t) — flat
    /// [B, D, |V|+1] probabilities, inference only.
    pub fn q_rows_batch(&self, seqs: &[usize], batch: usize, r: f64, t: f64) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let rs = vec![r; batch];
        let ts = vec![t; batch];
        let logits = self.logits_on(&mut tape, &vars, seqs, &rs, &ts);
        let q = tape.softmax_axis(logits, 2);
        tape.value(q).to_vec()
    }

    /// Per-position softmax rows q_θ for one sequence: D rows over V ∪ {MASK}.
    pub fn q_rows(&self, x_seq: &[usize], r: f64, t: f64) -> Vec<Vec<f64>> {
        let flat = self.q_rows_batch(x_seq, 1, r, t);
        let a = self.bb.vocab_size + 1;
        flat.chunks(a).map(|c| c.to_vec()).collect()
    }

    pub fn save(&self, path: &Path, schedule: Option<&AlphaSchedule>) -> Result<()> {
        self.bb.save(path, SEQ_KIND, schedule)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<AlphaSchedule>)> {
        let (bb, sched) =
            Backbone::load(path, SEQ_KIND, 2 * TIME_FEATURES_SEQ, "model/sequence-kernel/init")?;
        Ok((SequenceKernelNet { bb }, sched))
    }
}

/// Per-position mixture kernel rows (1−α)δ_{x_d} + α·q_θ — each a
/// distribution over V ∪ {MASK}, exactly δ at t = r.
pub fn seq_kernel_rows(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    x_seq: &[usize],
    r: f64,
    t: f64,
) -> Vec<Vec<f64>> {
    let a = schedule.alpha(r, t);
    let mut rows = net.q_rows(x_seq, r, t);
    for (row, &x) in rows.iter_mut().zip(x_seq) {
        for p in row.iter_mut() {
            *p *= a;
        }
        row[x] += 1.0 - a;
    }
    rows
}

/// Batched mixture rows, flat [B, D, |V|+1], shared (r, t).
pub fn seq_kernel_rows_batch(
    net: &SequenceKernelNet,
    schedule: &AlphaSchedule,
    seqs: &[usize],
    batch: usize,
    r: f64,
    t: f64,
) -> Vec<f64> {
    let a = schedule.alpha(r, t);
    let width = net.vocab_size() + 1;
    let mut flat = net.q_rows_batch(seqs, batch, r, t);
    for (pos, &x) in seqs.iter().enumerate() {
        let row = &mut flat[pos * width..(pos + 1) * width];
        for p in row.iter_mut() {
            *p *= a;
        }
        row[x] += 1.0 - a;
    }
    flat
}

/// Build ∂_t K_θ rows [B, D, |V|+1] on a tape — the sequence analogue of the
/// exact model's decomposition, three stacked time slices in one forward.
pub fn seq_dmf_prediction_on(
    tape: &mut Tape,
    net: &SequenceKernelNet,
    vars: &[Var],
    schedule: &AlphaSchedule,
    ids: &[usize],
    rs: &[f64],
    ts: &[f64],
    fd_step: f64,
) -> Var {
    seq_dmf_with_mid_logits_on(tape, net, vars, schedule, ids, rs, ts, fd_step).0
}

/// Same as [`seq_dmf_prediction_on`] but also hands back the raw logits of the
/// middle (r, t) slice, so a cross-entropy term can share the stacked forward.
#[allow(clippy::too_many_arguments)]
pub fn seq_dmf_with_mid_logits_on(
    tape: &mut Tape,
    net: &SequenceKernelNet,
    vars: &[Var],
    schedule: &AlphaSchedule,
    ids: &[usize],
    rs: &[f64],
    ts: &[f64],
    fd_step: f64,
) -> (Var, Var) {
    let b = rs.len();
    let d = net.seq_len();
    let a = net.vocab_size() + 1;
    assert!(b > 0 && ids.len() == b * d, "seq_dmf_prediction_on: bad batch");
    assert!(fd_step > 0.0);

    let mut stacked_ids = Vec::with_capacity(3 * b * d);
    let mut stacked_r = Vec::with_capacity(3 * b);
    let mut stacked_t = Vec::with_capacity(3 * b);
    let mut dalpha_rows = vec![0.0; b * d * a];
    let mut alpha_over_div = vec![0.0; b * d * a];
    let mut neg_delta = vec![0.0; b * d * a];
    for pass in 0..3 {
        for i in 0..b {
            let (t_lo, t_hi) = fd_times(ts[i], fd_step);
            stacked_ids.extend_from_slice(&ids[i * d..(i + 1) * d]);
            stacked_r.push(rs[i]);
            stacked_t.push(match pass {
                0 => t_lo,
                1 => ts[i],
                _ => t_hi,
            });
            if pass == 0 {
                let base = i * d * a;
                dalpha_rows[base..base + d * a].fill(schedule.dalpha_dt(rs[i], ts[i]));
                alpha_over_div[base..base + d * a]
                    .fill(schedule.alpha(rs[i], ts[i]) / (t_hi - t_lo));
                for (pos, &tok) in ids[i * d..(i + 1) * d].iter().enumerate() {
                    neg_delta[base + pos * a + tok] = -1.0;
                }
            }
        }
    }

    let logits = net.logits_on(tape, vars, &stacked_ids, &stacked_r, &stacked_t);
    let mid_logits = tape.narrow(logits, 0, b, b); // [B, D, A]
    let q = tape.softmax_axis(logits, 2); // [3B, D, A]
    let q_lo = tape.narrow(q, 0, 0, b);
    let q_mid = tape.narrow(q, 0, b, b);
    let q_hi = tape.narrow(q, 0, 2 * b, b);

    let shape = vec![b, d, a];
    let neg_delta_c = tape.constant(Tensor::from_vec(&shape, neg_delta));
    let dalpha_c = tape.constant(Tensor::from_vec(&shape, dalpha_rows));
    let ratio_c = tape.constant(Tensor::from_vec(&shape, alpha_over_div));

    let centered = tape.add(q_mid, neg_delta_c);
    let term_boundary = tape.mul(centered, dalpha_c);
    let neg_q_lo = tape.scale(q_lo, -1.0);
    let spread = tape.add(q_hi, neg_q_lo);
    let term_fd = tape.mul(spread, ratio_c);
    (tape.add(term_boundary, term_fd), mid_logits)
}

// ── Single-time posterior baseline ────────────────────────────────────────

pub struct PosteriorNet {
    bb: Backbone,
}

impl PosteriorNet {
    pub fn new(vocab_size: usize, seq_len: usize, seed: u64) -> Result<Self> {
        let bb = Backbone::new(vocab_size, seq_len, TIME_FEATURES_SEQ, seed, "model/posterior/init")?;
        Ok(PosteriorNet { bb })
    }

    pub fn vocab_size(&self) -> usize {
        self.bb.vocab_size
    }

    pub fn seq_len(&self) -> usize {
        self.bb.seq_len
    }

    pub fn mask_token(&self) -> usize {
        self.bb.vocab_size
    }

    pub fn seed(&self) -> u64 {
        self.bb.seed
    }

    pub fn param_count(&self) -> usize {
        self.bb.params.total_len()
    }

    pub fn params(&self) -> &ParamSet {
        &self.bb.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.bb.params
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.bb.params.register(tape, trainable)
    }

    /// Logits [B, D, |V|+1] with the MASK logit pushed to −∞ scale, so the
    /// softmax over the full head puts exactly zero mass on MASK.
    pub fn logits_on(&self, tape: &mut Tape, vars: &[Var], ids: &[usize], ts: &[f64]) -> Var {
        let w = TIME_FEATURES_SEQ;
        let mut data = vec![0.0; ts.len() * w];
        for (i, &t) in ts.iter().enumerate() {
            sinusoidal_into(t, &mut data[i * w..(i + 1) * w]);
        }
        let feats = Tensor::from_vec(&[ts.len(), w], data);
        let raw = self.bb.forward_logits(tape, vars, ids, feats);
        let a = self.bb.vocab_size + 1;
        let mut bias = vec![0.0; a];
        bias[self.bb.vocab_size] = MASK_LOGIT_BIAS;
        let bias_c = tape.constant(Tensor::from_vec(&[a], bias));
        tape.add(raw, bias_c)
    }

    /// Batched posterior rows, flat [B, D, |V|+1] with a hard zero in the
    /// MASK slot, shared t.
    pub fn posterior_rows_batch(&self, seqs: &[usize], batch: usize, t: f64) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let ts = vec![t; batch];
        let logits = self.logits_on(&mut tape, &vars, seqs, &ts);
        let p = tape.softmax_axis(logits, 2);
        tape.value(p).to_vec()
    }

    /// Per-position clean-token distributions: D rows of |V| probabilities.
    pub fn posterior_rows(&self, x_seq: &[usize], t: f64) -> Vec<Vec<f64>> {
        let a = self.bb.vocab_size + 1;
        let flat = self.posterior_rows_batch(x_seq, 1, t);
        flat.chunks(a).map(|c| c[..self.bb.vocab_size].to_vec()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.bb.save(path, POSTERIOR_KIND, None)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (bb, _) = Backbone::load(path, POSTERIOR_KIND, TIME_FEATURES_SEQ, "model/posterior/init")?;
        Ok(PosteriorNet { bb })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomize_head_seq(net: &mut SequenceKernelNet, scale: f64, seed: u64) {
        let mut rng = SeedStream::derive(seed, "model/test/seq-head-jitter");
        for name in ["head.weight", "head.bias"] {
            let t = net.params_mut().tensor_mut_by_name(name).expect("head");
            for v in &mut t.data {
                *v = scale * rng.normal();
            }
        }
    }

    #[test]
    fn parameter_counts_match_formula_and_stay_within_parity() {
        let (v, d) = (4usize, 8usize);
        let seqnet = SequenceKernelNet::new(v, d, 42).unwrap();
        let postnet = PosteriorNet::new(v, d, 42).unwrap();
        let a = v + 1;
        let block = 2 * D_MODEL // ln1
            + 3 * D_MODEL * D_MODEL + 3 * D_MODEL // qkv
            + D_MODEL * D_MODEL + D_MODEL // attn out
            + 2 * D_MODEL // ln2
            + D_FF * D_MODEL + D_FF // ff1
            + D_MODEL * D_FF + D_MODEL; // ff2
        let common = a * D_MODEL // tokens
            + d * D_MODEL // positions
            + N_BLOCKS * block
            + 2 * D_MODEL // final norm
            + a * D_MODEL + a; // head
        let seq_expect = common + D_MODEL * 2 * TIME_FEATURES_SEQ + D_MODEL;
        let post_expect = common + D_MODEL * TIME_FEATURES_SEQ + D_MODEL;
        assert_eq!(seqnet.param_count(), seq_expect);
        assert_eq!(postnet.param_count(), post_expect);
        let rel = (seq_expect - post_expect) as f64 / seq_expect as f64;
        assert!(rel < 0.05, "FAIL: parameter parity gap {rel:.3} exceeds 5%");
    }

    #[test]
    fn untrained_rows_are_uniform_over_the_full_alphabet() {
        let net = SequenceKernelNet::new(4, 6, 1).unwrap();
        let x = vec![4usize, 0, 1, 4, 2, 3]; // includes MASK (= 4)
        let rows = net.q_rows(&x, 0.2, 0.8);
        for row in rows {
            for &p in &row {
                assert!((p - 0.2).abs() < 1e-14, "FAIL: zero head must give uniform rows");
            }
        }
    }

    #[test]
    fn kernel_rows_are_exact_deltas_at_equal_times() {
        let mut net = SequenceKernelNet::new(3, 4, 2).unwrap();
        randomize_head_seq(&mut net, 2.0, 1);
        let sched = AlphaSchedule::ratio_to_end();
        let x = vec![3usize, 0, 2, 3];
        for r in [0.0, 0.5, 0.95] {
            let rows = seq_kernel_rows(&net, &sched, &x, r, r);
            for (row, &tok) in rows.iter().zip(&x) {
                for (y, &p) in row.iter().enumerate() {
                    assert_eq!(p, if y == tok { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn kernel_rows_are_simplex_points() {
        let mut net = SequenceKernelNet::new(5, 3, 3).unwrap();
        randomize_head_seq(&mut net, 1.0, 2);
        let sched = AlphaSchedule::ratio_to_end();
        for &(r, t) in &[(0.0, 1.0), (0.1, 0.3), (0.7, 0.71)] {
            let rows = seq_kernel_rows(&net, &sched, &[5, 1, 5], r, t);
            for row in rows {
                assert_eq!(row.len(), 6);
                assert!(row.iter().all(|&p| p >= 0.0));
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "FAIL: row sums to {s}");
            }
        }
    }

    #[test]
    fn full_interval_ratio_schedule_is_nearly_pure_network() {
        let mut net = SequenceKernelNet::new(4, 2, 4).unwrap();
        randomize_head_seq(&mut net, 1.0, 3);
        let sched = AlphaSchedule::ratio_to_end(); // α(0,1) = 1/(1+1e−6)
        let x = vec![4usize, 4];
        let mixture = seq_kernel_rows(&net, &sched, &x, 0.0, 1.0);
        let q = net.q_rows(&x, 0.0, 1.0);
        for (mrow, qrow) in mixture.iter().zip(&q) {
            for (m, qv) in mrow.iter().zip(qrow) {
                assert!((m - qv).abs() < 2e-6, "FAIL: mixture {m} vs network {qv}");
            }
        }
    }

    #[test]
    fn batched_rows_match_single_sequence_rows() {
        let mut net = SequenceKernelNet::new(3, 4, 5).unwrap();
        randomize_head_seq(&mut net, 1.0, 4);
        let s0 = vec![3usize, 1, 0, 3];
        let s1 = vec![2usize, 3, 3, 1];
        let mut both = s0.clone();
        both.extend_from_slice(&s1);
        let flat = net.q_rows_batch(&both, 2, 0.2, 0.9);
        let a = 4;
        for (i, seq) in [s0, s1].iter().enumerate() {
            let single = net.q_rows(seq, 0.2, 0.9);
            for pos in 0..4 {
                for y in 0..a {
                    let b = flat[i * 4 * a + pos * a + y];
                    assert!(
                        (single[pos][y] - b).abs() < 1e-12,
                        "FAIL: batch row disagrees with single-sequence row"
                    );
                }
            }
        }
    }

    #[test]
    fn dmf_rows_match_manual_recomputation_and_sum_to_zero() {
        let mut net = SequenceKernelNet::new(3, 3, 6).unwrap();
        randomize_head_seq(&mut net, 1.0, 5);
        let sched = AlphaSchedule::ratio_to_end();
        let ids = vec![3usize, 0, 3];
        let (r, t, h) = (0.25, 0.7, 1e-3);

        let mut tape = Tape::new();
        let vars = net.register(&mut tape, false);
        let pred = seq_dmf_prediction_on(&mut tape, &net, &vars, &sched, &ids, &[r], &[t], h);
        let got = tape.value(pred).to_vec();

        let (t_lo, t_hi) = fd_times(t, h);
        let q_lo = net.q_rows(&ids, r, t_lo);
        let q_mid = net.q_rows(&ids, r, t);
        let q_hi = net.q_rows(&ids, r, t_hi);
        let (a, da) = (sched.alpha(r, t), sched.dalpha_dt(r, t));
        let width = 4;
        for pos in 0..3 {
            let mut col_sum = 0.0;
            for y in 0..width {
                let delta = if y == ids[pos] { 1.0 } else { 0.0 };
                let manual = da * (q_mid[pos][y] - delta)
                    + a * (q_hi[pos][y] - q_lo[pos][y]) / (t_hi - t_lo);
                let gv = got[pos * width + y];
                assert!((gv - manual).abs() < 1e-12, "FAIL: pos {pos} entry {y}");
                col_sum += gv;
            }
            assert!(col_sum.abs() < 1e-10, "FAIL: ∂_t of a distribution must sum to 0");
        }
    }

    #[test]
    fn posterior_rows_exclude_mask_exactly() {
        let mut net = PosteriorNet::new(4, 3, 7).unwrap();
        let mut rng = SeedStream::derive(9, "model/test/post-head");
        let tensor = net.params_mut().tensor_mut_by_name("head.weight").unwrap();
        for v in &mut tensor.data {
            *v = rng.normal();
        }
        let x = vec![4usize, 2, 4];
        let flat = net.posterior_rows_batch(&x, 1, 0.3);
        for pos in 0..3 {
            assert_eq!(flat[pos * 5 + 4], 0.0, "FAIL: MASK slot must carry exactly zero mass");
        }
        let rows = net.posterior_rows(&x, 0.3);
        for row in rows {
            assert_eq!(row.len(), 4);
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn checkpoints_round_trip_and_enforce_kind() {
        let dir = tempfile::tempdir().unwrap();
        let seq_path = dir.path().join("seq.ckpt");
        let post_path = dir.path().join("post.ckpt");

        let mut seqnet = SequenceKernelNet::new(3, 2, 8).unwrap();
        randomize_head_seq(&mut seqnet, 1.0, 6);
        let sched = AlphaSchedule::ratio_to_end();
        seqnet.save(&seq_path, Some(&sched)).unwrap();
        let (back, loaded_sched) = SequenceKernelNet::load(&seq_path).unwrap();
        assert_eq!(loaded_sched, Some(sched));
        let x = vec![3usize, 1];
        assert_eq!(seqnet.q_rows(&x, 0.1, 0.9), back.q_rows(&x, 0.1, 0.9));

        let postnet = PosteriorNet::new(3, 2, 8).unwrap();
        postnet.save(&post_path).unwrap();
        assert!(SequenceKernelNet::load(&post_path).is_err(), "FAIL: kind must be enforced");
        assert!(PosteriorNet::load(&post_path).is_ok());
    }

    #[test]
    #[should_panic(expected = "sequence length mismatch")]
    fn wrong_length_sequence_is_a_contract_violation() {
        let net = SequenceKernelNet::new(3, 4, 9).unwrap();
        net.q_rows(&[0, 1], 0.1, 0.5); // seq_len is 4, not 2
    }

    #[test]
    fn seeds_are_distinct_and_reproducible() {
        let a = SequenceKernelNet::new(4, 8, 42).unwrap();
        let b = SequenceKernelNet::new(4, 8, 123).unwrap();
        let c = SequenceKernelNet::new(4, 8, 42).unwrap();
        assert_ne!(a.params().tensors()[0].data, b.params().tensors()[0].data);
        assert_eq!(a.params().tensors()[0].data, c.params().tensors()[0].data);
    }
}
