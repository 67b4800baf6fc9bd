//! Sinusoidal time features.
//!
//! Interleaved sin/cos pairs at geometrically spaced frequencies from 1 to
//! 10² rad. The top frequency is chosen to sit well below the reciprocal of
//! the finite-difference step used for ∂_t q (h = 1e-3, so ωh ≤ 0.1): every
//! feature is smooth across the difference window, which keeps the
//! differentiable FD term low-variance. Frequencies above ~1/h alias under
//! central differencing and inject per-sample gradient noise two orders of
//! magnitude above the learning signal — measured to stall kernel training
//! entirely. The top frequency still resolves times one minimum gap (0.01)
//! apart, which is the finest separation the samplers produce.

const FREQ_MAX: f64 = 1.0e2;

/// Fill `out` (even length ≥ 2) with [sin(ω₀x), cos(ω₀x), sin(ω₁x), …].
pub fn sinusoidal_into(x: f64, out: &mut [f64]) {
    let dim = out.len();
    assert!(dim >= 2 && dim % 2 == 0, "sinusoidal embedding dimension {dim} must be even ≥ 2");
    let pairs = dim / 2;
    for k in 0..pairs {
        let omega = if pairs == 1 {
            1.0
        } else {
            FREQ_MAX.powf(k as f64 / (pairs - 1) as f64)
        };
        let (s, c) = (omega * x).sin_cos();
        out[2 * k] = s;
        out[2 * k + 1] = c;
    }
}

pub fn sinusoidal(x: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    sinusoidal_into(x, &mut out);
    out
}
