//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The tape is define-by-run and rebuilt every training step: each primitive
//! records its output and whatever intermediates its vector-Jacobian product
//! needs. `backward` walks the record in exact reverse order, accumulating
//! gradients additively wherever a tensor feeds multiple consumers, and frees
//! interior values/gradients as soon as they can no longer be read — so a
//! tape that has been differentiated keeps only leaf values and leaf grads.
//!
//! Shape violations are programmer errors and panic with the primitive name
//! and the offending shapes; recoverable failures live in [`crate::error`].

use crate::fastmath::{exp_inplace, tanh_inplace};
use crate::tensor::{gemm, numel, Tensor};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

enum Op {
    Leaf,
    Matmul { a: usize, b: usize, ta: bool, tb: bool, batch: usize, m: usize, k: usize, n: usize },
    /// `b`'s shape is a suffix of `a`'s; `b` is tiled across the leading axes.
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Gelu { a: usize },
    Softmax { a: usize, axis: usize },
    LogSoftmax { a: usize, axis: usize },
    Embedding { table: usize, ids: Vec<usize> },
    LayerNorm { x: usize, gamma: usize, beta: usize },
    Permute { a: usize, perm: Vec<usize> },
    /// Zero-copy alias: shares the source's value and gradient buffers.
    Reshape,
    Concat { parts: Vec<usize>, axis: usize },
    Narrow { a: usize, axis: usize, start: usize },
    SumAll { a: usize },
    MeanAll { a: usize },
}

pub struct Tape {
    ops: Vec<Op>,
    shapes: Vec<Vec<usize>>,
    /// Value buffers; `None` for reshape aliases and for interior nodes
    /// already consumed by `backward`.
    values: Vec<Option<Vec<f64>>>,
    grads: Vec<Option<Vec<f64>>>,
    /// Saved intermediates (GELU: tanh of the inner polynomial; layer norm:
    /// per-row mean then per-row 1/std, concatenated).
    aux: Vec<Option<Vec<f64>>>,
    requires: Vec<bool>,
    /// Alias resolution: the node owning this node's buffers (self if none).
    roots: Vec<usize>,
    leaf: Vec<bool>,
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// outer × n × inner decomposition of `shape` around `axis`.
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for shape {shape:?}");
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            aux: Vec::new(),
            requires: Vec::new(),
            roots: Vec::new(),
            leaf: Vec::new(),
        }
    }

    fn push(
        &mut self,
        op: Op,
        shape: Vec<usize>,
        value: Option<Vec<f64>>,
        aux: Option<Vec<f64>>,
        requires: bool,
        root: Option<usize>,
        is_leaf: bool,
    ) -> Var {
        let id = self.ops.len();
        if let Some(v) = &value {
            assert_eq!(
                v.len(),
                numel(&shape),
                "tape: node value length {} does not match shape {:?}",
                v.len(),
                shape
            );
        }
        self.ops.push(op);
        self.shapes.push(shape);
        self.values.push(value);
        self.grads.push(None);
        self.aux.push(aux);
        self.requires.push(requires);
        self.roots.push(root.unwrap_or(id));
        self.leaf.push(is_leaf);
        Var(id)
    }

    /// Leaf that participates in differentiation (a model parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t.shape, Some(t.data), None, true, None, true)
    }

    /// Leaf treated as a constant; no gradient is ever written for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t.shape, Some(t.data), None, false, None, true)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.shapes[v.0]
    }

    /// The node's forward value. Panics if `backward` already consumed it.
    pub fn value(&self, v: Var) -> &[f64] {
        self.values[self.roots[v.0]]
            .as_deref()
            .expect("tape: value already consumed by backward")
    }

    pub fn value_tensor(&self, v: Var) -> Tensor {
        Tensor::from_vec(&self.shapes[v.0].clone(), self.value(v).to_vec())
    }

    /// Gradient accumulated for a leaf, if any consumer reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[self.roots[v.0]].as_deref()
    }

    /// Gradient for a leaf; zeros when the loss never reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; numel(&self.shapes[v.0])],
        }
    }

    fn val(&self, id: usize) -> &[f64] {
        self.values[self.roots[id]]
            .as_deref()
            .expect("tape: value already consumed by backward")
    }

    fn want(&self, id: usize) -> bool {
        self.requires[id]
    }

    // ── Primitives ──────────────────────────────────────────────────────

    /// Matrix product with optional transposes; 2-D, or batched with equal
    /// leading axes. Transposes apply to the last two axes of each operand.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (sa, sb) = (&self.shapes[a.0], &self.shapes[b.0]);
        assert!(
            sa.len() >= 2 && sa.len() == sb.len(),
            "matmul: operands must have equal rank ≥ 2, got {sa:?} and {sb:?}"
        );
        let nd = sa.len();
        assert_eq!(
            sa[..nd - 2],
            sb[..nd - 2],
            "matmul: batch axes differ, {sa:?} vs {sb:?}"
        );
        let (pa, qa) = (sa[nd - 2], sa[nd - 1]);
        let (pb, qb) = (sb[nd - 2], sb[nd - 1]);
        let (m, ka) = if ta { (qa, pa) } else { (pa, qa) };
        let (kb, n) = if tb { (qb, pb) } else { (pb, qb) };
        assert_eq!(
            ka, kb,
            "matmul: inner extents differ ({ka} vs {kb}) for {sa:?} (ta={ta}) and {sb:?} (tb={tb})"
        );
        let batch: usize = sa[..nd - 2].iter().product();
        let mut out_shape = sa[..nd - 2].to_vec();
        out_shape.extend_from_slice(&[m, n]);
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.val(a.0), self.val(b.0));
        let (mk, kn, mn) = (m * ka, ka * n, m * n);
        for s in 0..batch {
            gemm(
                m,
                ka,
                n,
                &av[s * mk..(s + 1) * mk],
                ta,
                &bv[s * kn..(s + 1) * kn],
                tb,
                0.0,
                &mut out[s * mn..(s + 1) * mn],
            );
        }
        let req = self.want(a.0) || self.want(b.0);
        self.push(
            Op::Matmul { a: a.0, b: b.0, ta, tb, batch, m, k: ka, n },
            out_shape,
            Some(out),
            None,
            req,
            None,
            false,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    fn broadcast_reps(&self, name: &str, a: usize, b: usize) -> usize {
        let (sa, sb) = (&self.shapes[a], &self.shapes[b]);
        assert!(
            sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == sb[..],
            "{name}: shape {sb:?} is not a trailing suffix of {sa:?}"
        );
        numel(sa) / numel(sb).max(1)
    }

    /// Elementwise sum; `b` may have any trailing-suffix shape of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let reps = self.broadcast_reps("add", a.0, b.0);
        let bv = self.val(b.0);
        let nb = bv.len();
        let mut out = self.val(a.0).to_vec();
        for r in 0..reps {
            let chunk = &mut out[r * nb..(r + 1) * nb];
            for (o, &x) in chunk.iter_mut().zip(bv) {
                *o += x;
            }
        }
        let req = self.want(a.0) || self.want(b.0);
        let shape = self.shapes[a.0].clone();
        self.push(Op::Add { a: a.0, b: b.0 }, shape, Some(out), None, req, None, false)
    }

    /// Elementwise product; same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let reps = self.broadcast_reps("mul", a.0, b.0);
        let bv = self.val(b.0);
        let nb = bv.len();
        let mut out = self.val(a.0).to_vec();
        for r in 0..reps {
            let chunk = &mut out[r * nb..(r + 1) * nb];
            for (o, &x) in chunk.iter_mut().zip(bv) {
                *o *= x;
            }
        }
        let req = self.want(a.0) || self.want(b.0);
        let shape = self.shapes[a.0].clone();
        self.push(Op::Mul { a: a.0, b: b.0 }, shape, Some(out), None, req, None, false)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.val(a.0).iter().map(|&x| x * c).collect();
        let req = self.want(a.0);
        let shape = self.shapes[a.0].clone();
        self.push(Op::Scale { a: a.0, c }, shape, Some(out), None, req, None, false)
    }

    /// GELU in its tanh form: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.val(a.0);
        let mut t: Vec<f64> = av.iter().map(|&x| GELU_C0 * (x + GELU_C1 * x * x * x)).collect();
        tanh_inplace(&mut t);
        let out: Vec<f64> = av.iter().zip(&t).map(|(&x, &th)| 0.5 * x * (1.0 + th)).collect();
        let req = self.want(a.0);
        let shape = self.shapes[a.0].clone();
        self.push(Op::Gelu { a: a.0 }, shape, Some(out), Some(t), req, None, false)
    }

    /// Softmax along `axis`. Rows are shifted by their max before
    /// exponentiation, so any finite input produces finite output.
    pub fn softmax_axis(&mut self, a: Var, axis: usize) -> Var {
        let shape = self.shapes[a.0].clone();
        let (outer, n, inner) = lanes(&shape, axis);
        assert!(n > 0, "softmax: axis {axis} has zero extent in {shape:?}");
        let mut out = self.val(a.0).to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(out[base + j * inner]);
                }
                for j in 0..n {
                    out[base + j * inner] -= mx;
                }
            }
        }
        exp_inplace(&mut out);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut s = 0.0;
                for j in 0..n {
                    s += out[base + j * inner];
                }
                for j in 0..n {
                    out[base + j * inner] /= s;
                }
            }
        }
        let req = self.want(a.0);
        self.push(Op::Softmax { a: a.0, axis }, shape, Some(out), None, req, None, false)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let axis = self.shapes[a.0].len() - 1;
        self.softmax_axis(a, axis)
    }

    pub fn log_softmax_axis(&mut self, a: Var, axis: usize) -> Var {
        let shape = self.shapes[a.0].clone();
        let (outer, n, inner) = lanes(&shape, axis);
        assert!(n > 0, "log_softmax: axis {axis} has zero extent in {shape:?}");
        let mut out = self.val(a.0).to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(out[base + j * inner]);
                }
                for j in 0..n {
                    out[base + j * inner] -= mx;
                }
            }
        }
        let mut ex = out.clone();
        exp_inplace(&mut ex);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut s = 0.0;
                for j in 0..n {
                    s += ex[base + j * inner];
                }
                let ls = s.ln();
                for j in 0..n {
                    out[base + j * inner] -= ls;
                }
            }
        }
        let req = self.want(a.0);
        self.push(Op::LogSoftmax { a: a.0, axis }, shape, Some(out), None, req, None, false)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let axis = self.shapes[a.0].len() - 1;
        self.log_softmax_axis(a, axis)
    }

    /// Row lookup: output row i is `table[ids[i]]`; backward scatter-adds.
    /// Also serves as the broadcast/repeat primitive (repeated ids).
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let ts = &self.shapes[table.0];
        assert_eq!(ts.len(), 2, "embedding: table must be 2-D, got {ts:?}");
        let (rows, dim) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            panic!("embedding: id {bad} out of range for table with {rows} rows");
        }
        let tv = self.val(table.0);
        let mut out = vec![0.0; ids.len() * dim];
        for (i, &id) in ids.iter().enumerate() {
            out[i * dim..(i + 1) * dim].copy_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        let req = self.want(table.0);
        self.push(
            Op::Embedding { table: table.0, ids: ids.to_vec() },
            vec![ids.len(), dim],
            Some(out),
            None,
            req,
            None,
            false,
        )
    }

    /// Layer normalization over the last axis with per-feature affine params.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let shape = self.shapes[x.0].clone();
        let d = *shape.last().expect("layer_norm: input must have at least one axis");
        assert_eq!(
            self.shapes[gamma.0],
            vec![d],
            "layer_norm: gamma shape {:?} must be [{d}]",
            self.shapes[gamma.0]
        );
        assert_eq!(
            self.shapes[beta.0],
            vec![d],
            "layer_norm: beta shape {:?} must be [{d}]",
            self.shapes[beta.0]
        );
        let rows = numel(&shape) / d;
        let xv = self.val(x.0);
        let gv = self.val(gamma.0).to_vec();
        let bv = self.val(beta.0).to_vec();
        let mut out = vec![0.0; xv.len()];
        let mut aux = vec![0.0; 2 * rows]; // [means..., rstds...]
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            aux[r] = mean;
            aux[rows + r] = rstd;
            let orow = &mut out[r * d..(r + 1) * d];
            for j in 0..d {
                orow[j] = (row[j] - mean) * rstd * gv[j] + bv[j];
            }
        }
        let req = self.want(x.0) || self.want(gamma.0) || self.want(beta.0);
        self.push(
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0 },
            shape,
            Some(out),
            Some(aux),
            req,
            None,
            false,
        )
    }

    /// Axis permutation (generalized transpose); materializes a copy.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let shape = self.shapes[a.0].clone();
        let nd = shape.len();
        let mut seen = vec![false; nd];
        assert!(
            perm.len() == nd && perm.iter().all(|&p| p < nd && !std::mem::replace(&mut seen[p], true)),
            "permute: {perm:?} is not a permutation of the axes of {shape:?}"
        );
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let av = self.val(a.0);
        let mut out = vec![0.0; av.len()];
        permute_into(av, &shape, perm, &mut out, false);
        let req = self.want(a.0);
        self.push(
            Op::Permute { a: a.0, perm: perm.to_vec() },
            out_shape,
            Some(out),
            None,
            req,
            None,
            false,
        )
    }

    /// Shape change without copying: the result aliases `a`'s buffers.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(
            numel(shape),
            numel(&self.shapes[a.0]),
            "reshape: cannot view {:?} as {shape:?}",
            self.shapes[a.0]
        );
        let root = self.roots[a.0];
        let req = self.want(a.0);
        self.push(Op::Reshape, shape.to_vec(), None, None, req, Some(root), false)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat: no inputs");
        let first = self.shapes[parts[0].0].clone();
        assert!(axis < first.len(), "concat: axis {axis} out of range for {first:?}");
        let mut total = 0usize;
        for &p in parts {
            let s = &self.shapes[p.0];
            assert!(
                s.len() == first.len()
                    && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y),
                "concat: shape {s:?} incompatible with {first:?} along axis {axis}"
            );
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = lanes(&out_shape, axis);
        let mut out = vec![0.0; numel(&out_shape)];
        let row = total * inner;
        let mut off = 0usize;
        for &p in parts {
            let n_p = self.shapes[p.0][axis];
            let pv = self.val(p.0);
            let chunk = n_p * inner;
            for o in 0..outer {
                out[o * row + off..o * row + off + chunk]
                    .copy_from_slice(&pv[o * chunk..(o + 1) * chunk]);
            }
            off += chunk;
        }
        let req = parts.iter().any(|&p| self.want(p.0));
        self.push(
            Op::Concat { parts: parts.iter().map(|p| p.0).collect(), axis },
            out_shape,
            Some(out),
            None,
            req,
            None,
            false,
        )
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shapes[a.0].clone();
        assert!(axis < shape.len(), "narrow: axis {axis} out of range for {shape:?}");
        assert!(
            start + len <= shape[axis],
            "narrow: [{start}, {}) exceeds extent {} of {shape:?} along axis {axis}",
            start + len,
            shape[axis]
        );
        let (outer, n, inner) = lanes(&shape, axis);
        let av = self.val(a.0);
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = o * n * inner + start * inner;
            out[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&av[src..src + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let req = self.want(a.0);
        self.push(Op::Narrow { a: a.0, axis, start }, out_shape, Some(out), None, req, None, false)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.val(a.0).iter().sum();
        let req = self.want(a.0);
        self.push(Op::SumAll { a: a.0 }, vec![], Some(vec![s]), None, req, None, false)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.val(a.0);
        assert!(!v.is_empty(), "mean_all: empty tensor");
        let s: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let req = self.want(a.0);
        self.push(Op::MeanAll { a: a.0 }, vec![], Some(vec![s]), None, req, None, false)
    }

    // ── Reverse pass ───────────────────────────────────────────────────

    fn grad_slot(&mut self, id: usize) -> &mut Vec<f64> {
        let root = self.roots[id];
        let n = self
            .values[root]
            .as_ref()
            .map(|v| v.len())
            .unwrap_or_else(|| numel(&self.shapes[root]));
        self.grads[root].get_or_insert_with(|| vec![0.0; n])
    }

    /// Run the reverse pass from a scalar loss. Gradients for leaves are kept
    /// and read via [`Tape::grad`]; interior values and gradients are freed
    /// as the sweep passes them.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            numel(&self.shapes[loss.0]) == 1,
            "backward: loss must be scalar, got shape {:?}",
            self.shapes[loss.0]
        );
        if !self.requires[loss.0] {
            return; // loss depends on no parameter; all grads stay zero
        }
        self.grad_slot(loss.0)[0] = 1.0;
        for j in (0..self.ops.len()).rev() {
            if matches!(self.ops[j], Op::Leaf | Op::Reshape) {
                continue;
            }
            if self.grads[j].is_some() && self.requires[j] {
                let g = self.grads[j].take().expect("grad present");
                self.dispatch_backward(j, &g);
            } else {
                self.grads[j] = None;
            }
            self.values[j] = None; // consumers all live above j; value is dead
        }
    }

    fn dispatch_backward(&mut self, j: usize, g: &[f64]) {
        // `ops[j]` is immutable while grads/values are mutated, so take the
        // lightweight description out first.
        match &self.ops[j] {
            Op::Leaf | Op::Reshape => unreachable!("filtered by backward"),
            &Op::Matmul { a, b, ta, tb, batch, m, k, n } => {
                let (mk, kn, mn) = (m * k, k * n, m * n);
                if self.want(a) {
                    let bv = self.values[self.roots[b]].take().expect("matmul: B value alive");
                    for s in 0..batch {
                        let gs = &g[s * mn..(s + 1) * mn];
                        let bs = &bv[s * kn..(s + 1) * kn];
                        let da = self.grad_slot(a);
                        let das = &mut da[s * mk..(s + 1) * mk];
                        if !ta {
                            gemm(m, n, k, gs, false, bs, !tb, 1.0, das);
                        } else {
                            gemm(k, n, m, bs, tb, gs, true, 1.0, das);
                        }
                    }
                    self.values[self.roots[b]] = Some(bv);
                }
                if self.want(b) {
                    let av = self.values[self.roots[a]].take().expect("matmul: A value alive");
                    for s in 0..batch {
                        let gs = &g[s * mn..(s + 1) * mn];
                        let as_ = &av[s * mk..(s + 1) * mk];
                        let db = self.grad_slot(b);
                        let dbs = &mut db[s * kn..(s + 1) * kn];
                        if !tb {
                            gemm(k, m, n, as_, !ta, gs, false, 1.0, dbs);
                        } else {
                            gemm(n, m, k, gs, true, as_, ta, 1.0, dbs);
                        }
                    }
                    self.values[self.roots[a]] = Some(av);
                }
            }
            &Op::Add { a, b } => {
                if self.want(a) {
                    let da = self.grad_slot(a);
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d += x;
                    }
                }
                if self.want(b) {
                    let nb = numel(&self.shapes[b]);
                    let db = self.grad_slot(b);
                    for chunk in g.chunks_exact(nb) {
                        for (d, &x) in db.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                }
            }
            &Op::Mul { a, b } => {
                let nb = numel(&self.shapes[b]);
                if self.want(a) {
                    let bv = self.values[self.roots[b]].take().expect("mul: B value alive");
                    let da = self.grad_slot(a);
                    for (gc, dc) in g.chunks_exact(nb).zip(da.chunks_exact_mut(nb)) {
                        for ((d, &x), &bvj) in dc.iter_mut().zip(gc).zip(bv.iter()) {
                            *d += x * bvj;
                        }
                    }
                    self.values[self.roots[b]] = Some(bv);
                }
                if self.want(b) {
                    let av = self.values[self.roots[a]].take().expect("mul: A value alive");
                    let db = self.grad_slot(b);
                    for (gc, ac) in g.chunks_exact(nb).zip(av.chunks_exact(nb)) {
                        for ((d, &x), &avj) in db.iter_mut().zip(gc).zip(ac.iter()) {
                            *d += x * avj;
                        }
                    }
                    self.values[self.roots[a]] = Some(av);
                }
            }
            &Op::Scale { a, c } => {
                if self.want(a) {
                    let da = self.grad_slot(a);
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d += c * x;
                    }
                }
            }
            &Op::Gelu { a } => {
                if self.want(a) {
                    let t = self.aux[j].take().expect("gelu: aux alive");
                    let av = self.values[self.roots[a]].take().expect("gelu: input alive");
                    let da = self.grad_slot(a);
                    for i in 0..g.len() {
                        let (x, th) = (av[i], t[i]);
                        let du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x);
                        da[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
                    }
                    self.values[self.roots[a]] = Some(av);
                }
            }
            &Op::Softmax { a, axis } => {
                if self.want(a) {
                    let shape = self.shapes[j].clone();
                    let (outer, n, inner) = lanes(&shape, axis);
                    let y = self.values[j].take().expect("softmax: output alive");
                    let da = self.grad_slot(a);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let mut dot = 0.0;
                            for jj in 0..n {
                                let idx = base + jj * inner;
                                dot += g[idx] * y[idx];
                            }
                            for jj in 0..n {
                                let idx = base + jj * inner;
                                da[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                    self.values[j] = Some(y);
                }
            }
            &Op::LogSoftmax { a, axis } => {
                if self.want(a) {
                    let shape = self.shapes[j].clone();
                    let (outer, n, inner) = lanes(&shape, axis);
                    let y = self.values[j].take().expect("log_softmax: output alive");
                    let da = self.grad_slot(a);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let mut s = 0.0;
                            for jj in 0..n {
                                s += g[base + jj * inner];
                            }
                            for jj in 0..n {
                                let idx = base + jj * inner;
                                da[idx] += g[idx] - y[idx].exp() * s;
                            }
                        }
                    }
                    self.values[j] = Some(y);
                }
            }
            Op::Embedding { table, ids } => {
                let (table, ids) = (*table, ids.clone());
                if self.want(table) {
                    let dim = self.shapes[table][1];
                    let dt = self.grad_slot(table);
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &g[i * dim..(i + 1) * dim];
                        let dst = &mut dt[id * dim..(id + 1) * dim];
                        for (d, &x) in dst.iter_mut().zip(src) {
                            *d += x;
                        }
                    }
                }
            }
            &Op::LayerNorm { x, gamma, beta } => {
                let d = *self.shapes[j].last().unwrap();
                let rows = g.len() / d;
                let aux = self.aux[j].take().expect("layer_norm: aux alive");
                let xv = self.values[self.roots[x]].take().expect("layer_norm: input alive");
                let gv = self.values[self.roots[gamma]]
                    .take()
                    .expect("layer_norm: gamma value alive");
                let mut xhat_row = vec![0.0; d];
                for r in 0..rows {
                    let (mean, rstd) = (aux[r], aux[rows + r]);
                    let xrow = &xv[r * d..(r + 1) * d];
                    for jj in 0..d {
                        xhat_row[jj] = (xrow[jj] - mean) * rstd;
                    }
                    let grow = &g[r * d..(r + 1) * d];
                    if self.want(gamma) {
                        let dg = self.grad_slot(gamma);
                        for jj in 0..d {
                            dg[jj] += grow[jj] * xhat_row[jj];
                        }
                    }
                    if self.want(beta) {
                        let db = self.grad_slot(beta);
                        for jj in 0..d {
                            db[jj] += grow[jj];
                        }
                    }
                    if self.want(x) {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for jj in 0..d {
                            let dxh = grow[jj] * gv[jj];
                            m1 += dxh;
                            m2 += dxh * xhat_row[jj];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        let dx = self.grad_slot(x);
                        let dxrow = &mut dx[r * d..(r + 1) * d];
                        for jj in 0..d {
                            let dxh = grow[jj] * gv[jj];
                            dxrow[jj] += rstd * (dxh - m1 - xhat_row[jj] * m2);
                        }
                    }
                }
                self.values[self.roots[gamma]] = Some(gv);
                self.values[self.roots[x]] = Some(xv);
            }
            Op::Permute { a, perm } => {
                let (a, perm) = (*a, perm.clone());
                if self.want(a) {
                    // Walking the forward loop again with src/dst swapped
                    // applies the inverse permutation.
                    let in_shape = self.shapes[a].clone();
                    let mut da = self.grads[self.roots[a]].take().unwrap_or_else(|| {
                        vec![0.0; numel(&in_shape)]
                    });
                    permute_into(g, &in_shape, &perm, &mut da, true);
                    self.grads[self.roots[a]] = Some(da);
                }
            }
            Op::Concat { parts, axis } => {
                let (parts, axis) = (parts.clone(), *axis);
                let out_shape = self.shapes[j].clone();
                let (outer, total, inner) = lanes(&out_shape, axis);
                let row = total * inner;
                let mut off = 0usize;
                for &p in &parts {
                    let chunk = self.shapes[p][axis] * inner;
                    if self.want(p) {
                        let dp = self.grad_slot(p);
                        for o in 0..outer {
                            let src = &g[o * row + off..o * row + off + chunk];
                            let dst = &mut dp[o * chunk..(o + 1) * chunk];
                            for (d, &x) in dst.iter_mut().zip(src) {
                                *d += x;
                            }
                        }
                    }
                    off += chunk;
                }
            }
            &Op::Narrow { a, axis, start } => {
                if self.want(a) {
                    let in_shape = self.shapes[a].clone();
                    let (outer, n, inner) = lanes(&in_shape, axis);
                    let len = self.shapes[j][axis];
                    let da = self.grad_slot(a);
                    for o in 0..outer {
                        let dst = o * n * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, &x) in da[dst..dst + len * inner].iter_mut().zip(src) {
                            *d += x;
                        }
                    }
                }
            }
            &Op::SumAll { a } => {
                if self.want(a) {
                    let da = self.grad_slot(a);
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            &Op::MeanAll { a } => {
                if self.want(a) {
                    let da = self.grad_slot(a);
                    let c = g[0] / da.len() as f64;
                    for d in da.iter_mut() {
                        *d += c;
                    }
                }
            }
        }
    }
}

/// Copy (or accumulate) `src` with shape `src_shape` permuted by `perm` into
/// `dst`. With `swap = false`, `dst[perm(idx)] = src[idx]` (forward); with
/// `swap = true`, `dst[idx] += src[perm(idx)]` (the inverse, for backward —
/// here `src` is laid out in the permuted order and `dst` in the original).
fn permute_into(src: &[f64], orig_shape: &[usize], perm: &[usize], dst: &mut [f64], swap: bool) {
    let nd = orig_shape.len();
    if nd == 0 {
        if swap {
            dst[0] += src[0];
        } else {
            dst[0] = src[0];
        }
        return;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| orig_shape[p]).collect();
    let orig_strides = strides_of(orig_shape);
    // Stride in the ORIGINAL buffer for a unit step along each OUTPUT axis.
    let step: Vec<usize> = perm.iter().map(|&p| orig_strides[p]).collect();
    let mut counter = vec![0usize; nd];
    let mut orig_off = 0usize;
    let total = out_shape.iter().product::<usize>();
    for out_lin in 0..total {
        if swap {
            dst[orig_off] += src[out_lin];
        } else {
            dst[out_lin] = src[orig_off];
        }
        // odometer increment over out_shape, tracking orig_off
        for ax in (0..nd).rev() {
            counter[ax] += 1;
            orig_off += step[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            orig_off -= step[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec())
    }

    #[test]
    fn gelu_fixes_zero() {
        let mut tp = Tape::new();
        let x = tp.constant(t(&[3], &[0.0, 1.0, -1.0]));
        let y = tp.gelu(x);
        let v = tp.value(y);
        assert_eq!(v[0], 0.0, "FAIL: GELU(0) must be exactly 0");
        assert!((v[1] - 0.841192).abs() < 1e-5);
        assert!((v[2] + 0.158808).abs() < 1e-5);
    }

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let mut tp = Tape::new();
        let x = tp.constant(t(&[4], &[2.5; 4]));
        let y = tp.softmax(x);
        for &v in tp.value(y) {
            assert!((v - 0.25).abs() < 1e-15, "FAIL: softmax of equal entries must be uniform");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tp = Tape::new();
        let x = tp.constant(t(&[3, 5], &[-3.0, 0.1, 7.0, 2.2, -9.0, 1.0, 1.0, 1.0, 400.0, -400.0, 0.0, 0.0, 0.0, 0.0, 1e4]));
        let y = tp.softmax(x);
        let v = tp.value(y);
        for r in 0..3 {
            let s: f64 = v[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "FAIL: row {r} sums to {s}, expected 1");
            assert!(v[r * 5..(r + 1) * 5].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn softmax_over_middle_axis() {
        let mut tp = Tape::new();
        // shape [2,2,2]; softmax along axis 1 normalizes pairs with stride 2
        let x = tp.constant(t(&[2, 2, 2], &[0.0, 10.0, 0.0, 10.0, 3.0, 3.0, 3.0, 3.0]));
        let y = tp.softmax_axis(x, 1);
        let v = tp.value(y);
        for i in 0..2 {
            assert!((v[i] + v[2 + i] - 1.0).abs() < 1e-12);
            assert!((v[4 + i] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_of_ones_counts_inner_dim() {
        let mut tp = Tape::new();
        let a = tp.constant(t(&[2, 3], &[1.0; 6]));
        let b = tp.constant(t(&[3, 2], &[1.0; 6]));
        let c = tp.matmul(a, b);
        assert_eq!(tp.shape(c), &[2, 2]);
        assert!(tp.value(c).iter().all(|&v| v == 3.0), "FAIL: 2×3·3×2 of ones must be all 3s");
    }

    #[test]
    fn batched_matmul_with_transpose() {
        let mut tp = Tape::new();
        // two batch items, each [1,2]·[1,2]^T → scalar-ish [1,1]
        let a = tp.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tp.constant(t(&[2, 1, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = tp.matmul_t(a, false, b, true);
        assert_eq!(tp.shape(c), &[2, 1, 1]);
        assert_eq!(tp.value(c), &[17.0, 53.0]); // 1·5+2·6, 3·7+4·8
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tp = Tape::new();
        let p = tp.param(t(&[4], &[0.3, -1.0, 2.0, 5.5]));
        let l = tp.sum_all(p);
        tp.backward(l);
        assert_eq!(tp.grad(p).unwrap(), &[1.0; 4], "FAIL: d(sum)/dp must be all ones");
    }

    #[test]
    fn backward_of_quadratic() {
        let mut tp = Tape::new();
        let p = tp.param(t(&[2], &[1.0, -2.0]));
        let sq = tp.mul(p, p);
        let l = tp.sum_all(sq);
        tp.backward(l);
        assert_eq!(tp.grad(p).unwrap(), &[2.0, -4.0], "FAIL: d(p²)/dp at (1,−2) must be (2,−4)");
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut tp = Tape::new();
        let used = tp.param(t(&[2], &[1.0, 1.0]));
        let unused = tp.param(t(&[3], &[5.0, 5.0, 5.0]));
        let l = tp.sum_all(used);
        tp.backward(l);
        assert!(tp.grad(unused).is_none());
        assert_eq!(tp.grad_or_zeros(unused), vec![0.0; 3]);
    }

    #[test]
    #[should_panic(expected = "loss must be scalar")]
    fn non_scalar_loss_is_rejected() {
        let mut tp = Tape::new();
        let p = tp.param(t(&[2], &[1.0, 2.0]));
        let y = tp.scale(p, 2.0);
        tp.backward(y);
    }

    #[test]
    #[should_panic(expected = "matmul")]
    fn matmul_shape_mismatch_names_primitive() {
        let mut tp = Tape::new();
        let a = tp.constant(t(&[2, 3], &[0.0; 6]));
        let b = tp.constant(t(&[2, 2], &[0.0; 4]));
        let _ = tp.matmul(a, b);
    }

    #[test]
    fn gradients_accumulate_across_consumers() {
        let mut tp = Tape::new();
        let p = tp.param(t(&[2], &[3.0, 4.0]));
        let a = tp.scale(p, 2.0);
        let b = tp.scale(p, 5.0);
        let s = tp.add(a, b);
        let l = tp.sum_all(s);
        tp.backward(l);
        assert_eq!(tp.grad(p).unwrap(), &[7.0, 7.0]);
    }

    #[test]
    fn add_broadcast_backward_sums_leading_axes() {
        let mut tp = Tape::new();
        let a = tp.param(t(&[2, 3], &[0.0; 6]));
        let b = tp.param(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tp.add(a, b);
        let w = tp.constant(t(&[2, 3], &[1.0, 1.0, 1.0, 10.0, 10.0, 10.0]));
        let wy = tp.mul(y, w);
        let l = tp.sum_all(wy);
        tp.backward(l);
        assert_eq!(tp.grad(b).unwrap(), &[11.0, 11.0, 11.0]);
        assert_eq!(tp.grad(a).unwrap(), &[1.0, 1.0, 1.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn embedding_backward_scatter_adds() {
        let mut tp = Tape::new();
        let table = tp.param(t(&[3, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let rows = tp.embedding(table, &[1, 1, 2]);
        assert_eq!(tp.value(rows), &[2.0, 3.0, 2.0, 3.0, 4.0, 5.0]);
        let l = tp.sum_all(rows);
        tp.backward(l);
        assert_eq!(tp.grad(table).unwrap(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn reshape_aliases_values_and_gradients() {
        let mut tp = Tape::new();
        let p = tp.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let r = tp.reshape(p, &[3, 2]);
        assert_eq!(tp.value(r), tp.value(p));
        let sq = tp.mul(r, r);
        let l = tp.sum_all(sq);
        tp.backward(l);
        assert_eq!(tp.grad(p).unwrap(), &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn permute_roundtrip_and_backward() {
        let mut tp = Tape::new();
        let p = tp.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let pt = tp.permute(p, &[1, 0]);
        assert_eq!(tp.shape(pt), &[3, 2]);
        assert_eq!(tp.value(pt), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = tp.permute(pt, &[1, 0]);
        assert_eq!(tp.value(back), tp.value(p));
        let w = tp.constant(t(&[3, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0]));
        let wy = tp.mul(pt, w);
        let l = tp.sum_all(wy);
        tp.backward(l);
        assert_eq!(tp.grad(p).unwrap(), &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn concat_narrow_roundtrip() {
        let mut tp = Tape::new();
        let a = tp.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tp.param(t(&[2, 1], &[9.0, 8.0]));
        let c = tp.concat(&[a, b], 1);
        assert_eq!(tp.shape(c), &[2, 3]);
        assert_eq!(tp.value(c), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let sliced = tp.narrow(c, 1, 2, 1);
        assert_eq!(tp.value(sliced), &[9.0, 8.0]);
        let l = tp.sum_all(sliced);
        tp.backward(l);
        assert_eq!(tp.grad(a).unwrap(), &[0.0; 4]);
        assert_eq!(tp.grad(b).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut tp = Tape::new();
        let x = tp.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let gamma = tp.constant(t(&[4], &[1.0; 4]));
        let beta = tp.constant(t(&[4], &[0.0; 4]));
        let y = tp.layer_norm(x, gamma, beta, 1e-5);
        let v = tp.value(y);
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|&u| (u - mean) * (u - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4); // eps shrinks variance slightly
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let mut tp = Tape::new();
        let x = tp.constant(t(&[2, 3], &[1.0, -2.0, 0.5, 100.0, 99.0, -50.0]));
        let ls = tp.log_softmax(x);
        let sm = tp.softmax(x);
        let (lv, sv) = (tp.value(ls).to_vec(), tp.value(sm).to_vec());
        for (l, s) in lv.iter().zip(&sv) {
            assert!((l.exp() - s).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_all_backward_divides_by_count() {
        let mut tp = Tape::new();
        let p = tp.param(t(&[5], &[1.0; 5]));
        let m = tp.mean_all(p);
        tp.backward(m);
        assert_eq!(tp.grad(p).unwrap(), &[0.2; 5]);
    }

    #[test]
    fn backward_frees_interior_values() {
        let mut tp = Tape::new();
        let p = tp.param(t(&[2], &[1.0, 2.0]));
        let y = tp.scale(p, 3.0);
        let l = tp.sum_all(y);
        tp.backward(l);
        let hook = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let freed =
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| tp.value(y))).is_err();
        std::panic::set_hook(hook);
        assert!(freed, "FAIL: interior value should be freed by backward");
        assert_eq!(tp.value(p), &[1.0, 2.0]); // leaves survive
    }
}
