//! Vectorized transcendentals for the hot loops (softmax, GELU).
//!
//! Every element goes through the same SIMD polynomial regardless of slice
//! length, so results are reproducible across runs and never depend on how a
//! buffer happens to be chunked.

use wide::f64x4;

#[inline]
fn exp4(vals: [f64; 4]) -> [f64; 4] {
    f64x4::new(vals).exp().into()
}

/// In-place elementwise exp.
pub fn exp_inplace(xs: &mut [f64]) {
    let mut chunks = xs.chunks_exact_mut(4);
    for ch in &mut chunks {
        let out = exp4([ch[0], ch[1], ch[2], ch[3]]);
        ch.copy_from_slice(&out);
    }
    let rem = chunks.into_remainder();
    if !rem.is_empty() {
        let mut buf = [0.0; 4];
        buf[..rem.len()].copy_from_slice(rem);
        let out = exp4(buf);
        rem.copy_from_slice(&out[..rem.len()]);
    }
}

/// In-place elementwise tanh, evaluated as 1 − 2/(e^{2x}+1).
pub fn tanh_inplace(xs: &mut [f64]) {
    // e^{2x} overflows past x ≈ 355; tanh is exactly ±1.0 in f64 well before.
    for x in xs.iter_mut() {
        *x = (*x * 2.0).clamp(-700.0, 700.0);
    }
    exp_inplace(xs);
    for x in xs.iter_mut() {
        *x = 1.0 - 2.0 / (*x + 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_matches_std() {
        let mut worst: f64 = 0.0;
        for i in 0..20000 {
            let x = -700.0 + i as f64 * 0.07;
            let mut v = [x];
            exp_inplace(&mut v);
            let want = x.exp();
            let rel = if want > 0.0 { (v[0] - want).abs() / want } else { v[0].abs() };
            worst = worst.max(rel);
        }
        assert!(worst < 1e-13, "exp max rel err {worst:e}");
    }

    #[test]
    fn exp_of_zero_is_one() {
        let mut v = [0.0, 0.0, 0.0, 0.0, 0.0];
        exp_inplace(&mut v);
        assert!(v.iter().all(|&y| y == 1.0));
    }

    #[test]
    fn tanh_matches_std() {
        let mut worst: f64 = 0.0;
        for i in 0..4000 {
            let x = -20.0 + i as f64 * 0.01;
            let mut v = [x];
            tanh_inplace(&mut v);
            worst = worst.max((v[0] - x.tanh()).abs());
        }
        assert!(worst < 1e-14, "tanh max abs err {worst:e}");
    }

    #[test]
    fn tanh_saturates_cleanly() {
        let mut v = [1000.0, -1000.0];
        tanh_inplace(&mut v);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], -1.0);
    }

    #[test]
    fn chunk_position_does_not_change_values() {
        // Same input value at different offsets must produce the same output.
        let mut a = [0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3];
        exp_inplace(&mut a);
        assert!(a.iter().all(|&y| y == a[0]));
    }
}
