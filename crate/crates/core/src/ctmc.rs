//! Exact reference continuous-time Markov chains.
//!
//! Conventions: a generator entry (y, x) is the instantaneous rate from
//! source state x to destination y, stored row-major as `rates[y*n + x]`;
//! columns sum to zero. Transition kernels follow the same layout — entry
//! (y, x) is P(X_t = y | X_r = x) — so columns are distributions and
//! propagation acts on column vectors from the left.
//!
//! Matrix exponentials use uniformization: with Λ ≥ max |diag(Q)| and
//! P = I + Q/Λ (a stochastic matrix), exp(dt·Q) = Σ_k e^{−Λdt}(Λdt)^k/k! P^k.
//! Every partial sum is a mixture of stochastic matrices scaled by a Poisson
//! mass, so nonnegativity holds by construction and the truncation error is
//! exactly the Poisson tail, which we cut below 1e-14.

use crate::error::{CoreError, Result};
use crate::rng::SeedStream;
use serde::{Deserialize, Serialize};

const POISSON_TAIL: f64 = 1e-14;

// ── Generators ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    n: usize,
    rates: Vec<f64>,
}

impl Generator {
    /// Validates off-diagonal nonnegativity and zero column sums (1e-12).
    pub fn from_rates(n: usize, rates: Vec<f64>) -> Result<Self> {
        if n == 0 || rates.len() != n * n {
            return Err(CoreError::invalid(format!(
                "generator: expected {n}×{n} = {} rates, got {}",
                n * n,
                rates.len()
            )));
        }
        let g = Generator { n, rates };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        for x in 0..n {
            let mut col = 0.0;
            for y in 0..n {
                let v = self.rates[y * n + x];
                if !v.is_finite() {
                    return Err(CoreError::invalid(format!(
                        "generator: non-finite rate at ({y},{x})"
                    )));
                }
                if y != x && v < 0.0 {
                    return Err(CoreError::invalid(format!(
                        "generator: negative off-diagonal rate {v} at ({y},{x})"
                    )));
                }
                col += v;
            }
            if col.abs() > 1e-12 {
                return Err(CoreError::invalid(format!(
                    "generator: column {x} sums to {col:e}, expected 0"
                )));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Rate from source x to destination y.
    pub fn rate(&self, y: usize, x: usize) -> f64 {
        self.rates[y * self.n + x]
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.rates.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// One CSV row per destination state.
    pub fn to_csv(&self) -> String {
        matrix_csv(self.n, &self.rates)
    }
}

fn matrix_csv(n: usize, m: &[f64]) -> String {
    let mut out = String::new();
    for y in 0..n {
        let row: Vec<String> = (0..n).map(|x| format!("{:.17e}", m[y * n + x])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Symmetric two-state chain: rate `lambda` in both directions.
pub fn build_two_state(lambda: f64) -> Result<Generator> {
    if !(lambda > 0.0) {
        return Err(CoreError::invalid(format!("two-state: rate must be positive, got {lambda}")));
    }
    Generator::from_rates(2, vec![-lambda, lambda, lambda, -lambda])
}

/// Ring of n states: rate `lambda_f` from x to x+1 (mod n), `lambda_b` from
/// x to x−1 (mod n).
pub fn build_ring(n: usize, lambda_f: f64, lambda_b: f64) -> Result<Generator> {
    if n < 3 {
        return Err(CoreError::invalid(format!("ring: need at least 3 states, got {n}")));
    }
    if !(lambda_f > 0.0 && lambda_b > 0.0) {
        return Err(CoreError::invalid(format!(
            "ring: rates must be positive, got forward {lambda_f}, backward {lambda_b}"
        )));
    }
    let mut rates = vec![0.0; n * n];
    for x in 0..n {
        rates[((x + 1) % n) * n + x] = lambda_f;
        rates[((x + n - 1) % n) * n + x] = lambda_b;
        rates[x * n + x] = -(lambda_f + lambda_b);
    }
    Generator::from_rates(n, rates)
}

/// Birth–death chain on {0,…,n−1} with reflecting boundaries: birth rate `b`
/// from x to x+1 for x < n−1, death rate `d` from x to x−1 for x > 0.
pub fn build_birth_death(n: usize, b: f64, d: f64) -> Result<Generator> {
    if n < 2 {
        return Err(CoreError::invalid(format!("birth-death: need at least 2 states, got {n}")));
    }
    if !(b > 0.0 && d > 0.0) {
        return Err(CoreError::invalid(format!(
            "birth-death: rates must be positive, got birth {b}, death {d}"
        )));
    }
    let mut rates = vec![0.0; n * n];
    for x in 0..n {
        let mut out = 0.0;
        if x + 1 < n {
            rates[(x + 1) * n + x] = b;
            out += b;
        }
        if x > 0 {
            rates[(x - 1) * n + x] = d;
            out += d;
        }
        rates[x * n + x] = -out;
    }
    Generator::from_rates(n, rates)
}

// ── Kernels ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub r: f64,
    pub t: f64,
    n: usize,
    probs: Vec<f64>,
}

impl KernelMatrix {
    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// P(X_t = y | X_r = x).
    pub fn prob(&self, y: usize, x: usize) -> f64 {
        self.probs[y * self.n + x]
    }

    /// The distribution over destinations given source x.
    pub fn column(&self, x: usize) -> Vec<f64> {
        (0..self.n).map(|y| self.probs[y * self.n + x]).collect()
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(self.n, &self.probs)
    }
}

/// exp(dt·Q) by uniformization; exactly the identity at dt = 0.
pub fn kernel_expm(q: &Generator, dt: f64) -> Result<Vec<f64>> {
    if !(dt >= 0.0) {
        return Err(CoreError::invalid(format!("kernel_expm: dt must be ≥ 0, got {dt}")));
    }
    let n = q.n_states();
    let mut identity = vec![0.0; n * n];
    for i in 0..n {
        identity[i * n + i] = 1.0;
    }
    let lambda = (0..n).map(|i| q.rate(i, i).abs()).fold(0.0, f64::max);
    if lambda == 0.0 || dt == 0.0 {
        return Ok(identity);
    }
    // P = I + Q/Λ is stochastic
    let mut p = q.rates().to_vec();
    for v in p.iter_mut() {
        *v /= lambda;
    }
    for i in 0..n {
        p[i * n + i] += 1.0;
    }
    let mu = lambda * dt;
    let mut weight = (-mu).exp(); // Poisson mass at k = 0
    let mut cumulative = weight;
    let mut power = identity.clone(); // P^k
    let mut out = vec![0.0; n * n];
    for (o, &i) in out.iter_mut().zip(&identity) {
        *o = weight * i;
    }
    let mut k = 0usize;
    while 1.0 - cumulative > POISSON_TAIL {
        k += 1;
        weight *= mu / k as f64;
        cumulative += weight;
        power = matmul_small(n, &p, &power);
        for (o, &pw) in out.iter_mut().zip(&power) {
            *o += weight * pw;
        }
        if k > 100_000 {
            return Err(CoreError::invalid(format!(
                "kernel_expm: uniformization failed to converge (Λ·dt = {mu})"
            )));
        }
    }
    Ok(out)
}

/// Kernel between two times in [0,1] for a time-homogeneous generator.
pub fn kernel_between(q: &Generator, r: f64, t: f64) -> Result<KernelMatrix> {
    if !(0.0 <= r && r <= t && t <= 1.0) {
        return Err(CoreError::invalid(format!(
            "kernel_between: need 0 ≤ r ≤ t ≤ 1, got r = {r}, t = {t}"
        )));
    }
    let probs = kernel_expm(q, t - r)?;
    Ok(KernelMatrix { r, t, n: q.n_states(), probs })
}

fn matmul_small(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for y in 0..n {
        for z in 0..n {
            let av = a[y * n + z];
            if av == 0.0 {
                continue;
            }
            for x in 0..n {
                c[y * n + x] += av * b[z * n + x];
            }
        }
    }
    c
}

// ── Mean rate and the identities it satisfies ───────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRateMatrix {
    pub r: f64,
    pub t: f64,
    n: usize,
    rates: Vec<f64>,
}

impl MeanRateMatrix {
    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, y: usize, x: usize) -> f64 {
        self.rates[y * self.n + x]
    }

    /// δ + (t−r)·ū — the algebraic inverse of [`mean_rate`].
    pub fn reconstruct(&self) -> KernelMatrix {
        let n = self.n;
        let dt = self.t - self.r;
        let mut probs = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let delta = if y == x { 1.0 } else { 0.0 };
                probs[y * n + x] = delta + dt * self.rates[y * n + x];
            }
        }
        KernelMatrix { r: self.r, t: self.t, n, probs }
    }
}

/// ū = (K − I)/(t − r), the finite-interval average rate of transport.
pub fn mean_rate(k: &KernelMatrix) -> Result<MeanRateMatrix> {
    if !(k.t > k.r) {
        return Err(CoreError::invalid(format!(
            "mean_rate: requires t > r, got r = {}, t = {}",
            k.r, k.t
        )));
    }
    let n = k.n;
    let dt = k.t - k.r;
    let mut rates = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let delta = if y == x { 1.0 } else { 0.0 };
            rates[y * n + x] = (k.probs[y * n + x] - delta) / dt;
        }
    }
    Ok(MeanRateMatrix { r: k.r, t: k.t, n, rates })
}

/// Max-abs residual of the Kolmogorov forward equation ∂_t K_{r,t} = Q·K_{r,t},
/// with the time derivative taken by central difference (one-sided when t±h
/// leaves [r, 1]).
pub fn forward_equation_residual(q: &Generator, r: f64, t: f64, h: f64) -> f64 {
    assert!(h > 0.0, "forward_equation_residual: h must be positive");
    let n = q.n_states();
    let k_t = kernel_expm(q, t - r).expect("valid dt");
    let rhs = matmul_small(n, q.rates(), &k_t);
    let deriv: Vec<f64> = if t - h >= r && t + h <= 1.0 {
        let kp = kernel_expm(q, t + h - r).expect("valid dt");
        let km = kernel_expm(q, t - h - r).expect("valid dt");
        kp.iter().zip(&km).map(|(&p, &m)| (p - m) / (2.0 * h)).collect()
    } else if t - h < r {
        let kp = kernel_expm(q, t + h - r).expect("valid dt");
        kp.iter().zip(&k_t).map(|(&p, &c)| (p - c) / h).collect()
    } else {
        let km = kernel_expm(q, t - h - r).expect("valid dt");
        k_t.iter().zip(&km).map(|(&c, &m)| (c - m) / h).collect()
    };
    deriv.iter().zip(&rhs).map(|(&d, &g)| (d - g).abs()).fold(0.0, f64::max)
}

/// Max-abs residual of the mean-rate identity
/// ū(r,t) = Q·K_{r,t} − (t−r)·∂_t ū(r,t), with ∂_t ū by central difference.
pub fn verify_dmf_identity(q: &Generator, r: f64, t: f64, h: f64) -> f64 {
    assert!(r < t, "verify_dmf_identity: requires r < t");
    assert!(t - h > r && t + h <= 1.0, "verify_dmf_identity: t ± h must stay in (r, 1]");
    let n = q.n_states();
    let ubar = |tt: f64| -> Vec<f64> {
        let k = kernel_between(q, r, tt).expect("valid times");
        mean_rate(&k).expect("t > r").rates
    };
    let lhs = ubar(t);
    let k_t = kernel_expm(q, t - r).expect("valid dt");
    let qk = matmul_small(n, q.rates(), &k_t);
    let up = ubar(t + h);
    let um = ubar(t - h);
    let dt = t - r;
    (0..n * n)
        .map(|i| {
            let dudt = (up[i] - um[i]) / (2.0 * h);
            (lhs[i] - (qk[i] - dt * dudt)).abs()
        })
        .fold(0.0, f64::max)
}

/// Max-abs difference between ū(r,t) and the composite-Simpson time average
/// of Q·K_{r,τ} over τ ∈ [r,t]. `n_quad` counts Simpson panels — parabolic
/// segments spanning two subintervals each — so the subinterval grid is
/// always even and any panel count ≥ 2 is valid, odd or not.
pub fn verify_integral_form(q: &Generator, r: f64, t: f64, n_quad: usize) -> f64 {
    assert!(r < t, "verify_integral_form: requires r < t");
    assert!(n_quad >= 2, "verify_integral_form: need at least 2 panels");
    let m = 2 * n_quad;
    let n = q.n_states();
    let dt = t - r;
    let h = dt / m as f64;
    let integrand = |tau: f64| -> Vec<f64> {
        let k = kernel_expm(q, tau - r).expect("valid dt");
        matmul_small(n, q.rates(), &k)
    };
    let mut acc = integrand(r);
    let last = integrand(t);
    for (a, &l) in acc.iter_mut().zip(&last) {
        *a += l;
    }
    for j in 1..m {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        let f = integrand(r + h * j as f64);
        for (a, &v) in acc.iter_mut().zip(&f) {
            *a += w * v;
        }
    }
    let scale = h / 3.0 / dt; // Simpson weights, then the 1/(t−r) average
    let k = kernel_between(q, r, t).expect("valid times");
    let ubar = mean_rate(&k).expect("t > r");
    acc.iter()
        .zip(ubar.rates())
        .map(|(&quad, &u)| (quad * scale - u).abs())
        .fold(0.0, f64::max)
}

// ── Sampling ────────────────────────────────────────────────────────────

/// One categorical draw from the kernel column of source state x.
pub fn sample_state(k: &KernelMatrix, x: usize, rng: &mut SeedStream) -> usize {
    assert!(x < k.n, "sample_state: state {x} out of range for {} states", k.n);
    let col: Vec<f64> = (0..k.n).map(|y| k.probs[y * k.n + x]).collect();
    rng.categorical(&col)
}

/// Which reference chain an experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChainKind {
    TwoState { lambda: f64 },
    Ring { n: usize, lambda_f: f64, lambda_b: f64 },
    BirthDeath { n: usize, birth: f64, death: f64 },
}

impl ChainKind {
    pub fn build(&self) -> Result<Generator> {
        match *self {
            ChainKind::TwoState { lambda } => build_two_state(lambda),
            ChainKind::Ring { n, lambda_f, lambda_b } => build_ring(n, lambda_f, lambda_b),
            ChainKind::BirthDeath { n, birth, death } => build_birth_death(n, birth, death),
        }
    }
}

/// A reference chain together with its initial distribution p_0.
#[derive(Debug, Clone)]
pub struct ReferenceProcess {
    pub kind: ChainKind,
    pub generator: Generator,
    pub p0: Vec<f64>,
}

impl ReferenceProcess {
    /// Uniform p_0 over the chain's states.
    pub fn new(kind: ChainKind) -> Result<Self> {
        let generator = kind.build()?;
        let n = generator.n_states();
        Ok(ReferenceProcess { kind, generator, p0: vec![1.0 / n as f64; n] })
    }

    pub fn with_p0(kind: ChainKind, p0: Vec<f64>) -> Result<Self> {
        let generator = kind.build()?;
        if p0.len() != generator.n_states() {
            return Err(CoreError::invalid(format!(
                "reference process: p0 has {} entries for {} states",
                p0.len(),
                generator.n_states()
            )));
        }
        let total: f64 = p0.iter().sum();
        if p0.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(CoreError::invalid(format!(
                "reference process: p0 must be a distribution (sum {total})"
            )));
        }
        Ok(ReferenceProcess { kind, generator, p0 })
    }

    pub fn n_states(&self) -> usize {
        self.generator.n_states()
    }

    /// Draw x_0 ~ p_0, then x_r ~ K_{0,r}(·, x_0); the composition is p_r.
    pub fn marginal_state_at(&self, r: f64, rng: &mut SeedStream) -> usize {
        assert!((0.0..=1.0).contains(&r), "marginal_state_at: r = {r} outside [0,1]");
        let x0 = rng.categorical(&self.p0);
        if r == 0.0 {
            return x0;
        }
        let k = kernel_between(&self.generator, 0.0, r).expect("valid times");
        sample_state(&k, x0, rng)
    }

    /// p_r by exact propagation: p_r = K_{0,r} · p_0.
    pub fn marginal_distribution(&self, r: f64) -> Vec<f64> {
        let n = self.n_states();
        let k = kernel_between(&self.generator, 0.0, r).expect("valid times");
        let mut p = vec![0.0; n];
        for y in 0..n {
            for x in 0..n {
                p[y] += k.prob(y, x) * self.p0[x];
            }
        }
        p
    }
}

// ── Tests ───────────────────────────────────────────────────────────────
