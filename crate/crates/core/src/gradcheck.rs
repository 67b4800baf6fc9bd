//! Central finite-difference gradient oracle, used by tests to validate every
//! reverse-mode primitive and their compositions against an independent
//! numerical derivative.

/// Central finite-difference gradient of a scalar function at `x0`.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "fd_gradient: step must be positive");
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x0.len()];
    for i in 0..x0.len() {
        x[i] = x0[i] + h;
        let fp = f(&x);
        x[i] = x0[i] - h;
        let fm = f(&x);
        x[i] = x0[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Worst relative discrepancy |a−b| / max(1, |a|, |b|) across two gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "max_rel_err: length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_recovers_quadratic_gradient() {
        let f = |x: &[f64]| x.iter().map(|&v| v * v).sum::<f64>();
        let g = fd_gradient(f, &[1.0, -2.0, 0.5], 1e-6);
        let want = [2.0, -4.0, 1.0];
        assert!(max_rel_err(&g, &want) < 1e-9);
    }

    #[test]
    fn rel_err_uses_unit_floor() {
        // tiny absolute differences on tiny values should not explode
        assert!(max_rel_err(&[1e-12], &[2e-12]) < 1e-11);
        assert!((max_rel_err(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
    }
}
