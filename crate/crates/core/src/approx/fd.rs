//! Central-difference gradient oracle.
//!
//! Every analytic gradient in this workspace is validated against
//! [`central_difference`], which evaluates a black-box scalar objective at
//! `θ ± step·e_i` and never shares code with the reverse-mode tape.

/// Central-difference gradient of `f` at `point`:
/// `g_i ≈ (f(θ + step·e_i) − f(θ − step·e_i)) / (2·step)`.
pub fn central_difference<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "central_difference: step must be positive");
    let mut probe = point.to_vec();
    let mut grad = vec![0.0; point.len()];
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let hi = f(&probe);
        probe[i] = orig - step;
        let lo = f(&probe);
        probe[i] = orig;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    grad
}

/// Worst-coordinate relative error between two gradient vectors, measured as
/// `|a_i − b_i| / max(1, |a_i|, |b_i|)` so that near-zero coordinates are
/// compared absolutely and large ones relatively.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "max_rel_error: length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / 1.0_f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_matches_polynomial_derivative() {
        // f(x, y) = x²y + 3y has ∇f = (2xy, x² + 3); at (2, 5): (20, 7).
        let f = |p: &[f64]| p[0] * p[0] * p[1] + 3.0 * p[1];
        let g = central_difference(f, &[2.0, 5.0], 1e-5);
        assert!((g[0] - 20.0).abs() < 1e-8);
        assert!((g[1] - 7.0).abs() < 1e-8);
    }

    #[test]
    fn max_rel_error_uses_unit_floor_for_small_entries() {
        let err = max_rel_error(&[0.0, 100.0], &[1e-7, 100.0 + 1e-3]);
        // First coordinate compared absolutely (floor 1), second relatively.
        assert!((err - 1e-7).abs() < 1e-12 || (err - 1e-5).abs() < 1e-9);
    }
}
