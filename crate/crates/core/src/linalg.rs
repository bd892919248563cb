//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Spectral norm (largest absolute eigenvalue) of a symmetric matrix.
pub fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &e| acc.max(e.abs()))
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration.
///
/// Used where an iterative route is wanted (e.g. the smallest eigenvalue of a
/// positive definite matrix via its inverse) without a full eigendecomposition.
pub fn power_iteration(m: &DMatrix<f64>, max_iter: usize, tol: f64) -> f64 {
    let p = m.nrows();
    if p == 0 {
        return 0.0;
    }
    // Deterministic non-degenerate start vector.
    let mut v = DVector::from_fn(p, |i, _| 1.0 + (i as f64) / (p as f64));
    v /= v.norm();
    let mut lambda = 0.0_f64;
    for _ in 0..max_iter {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / norm;
        let lambda_next = next.dot(&(m * &next));
        if (lambda_next - lambda).abs() <= tol * lambda_next.abs().max(1.0) {
            return lambda_next.abs();
        }
        lambda = lambda_next;
        v = next;
    }
    lambda.abs()
}

/// Smallest eigenvalue of a symmetric positive definite matrix, computed by
/// power iteration on its inverse.
pub fn smallest_eigenvalue_from_inverse(inv: &DMatrix<f64>) -> f64 {
    let top = power_iteration(inv, 10_000, 1e-12);
    if top == 0.0 {
        0.0
    } else {
        1.0 / top
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0]));
        assert!((symmetric_spectral_norm(&m) - 3.0).abs() < 1e-12);
        assert!((power_iteration(&m, 10_000, 1e-14) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn power_iteration_matches_eigen_on_random_symmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = 6;
            let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
            let s = (&a + a.transpose()) / 2.0;
            let direct = symmetric_spectral_norm(&s);
            let iterated = power_iteration(&s, 50_000, 1e-14);
            assert!((direct - iterated).abs() < 1e-6 * direct.max(1.0));
        }
    }

    #[test]
    fn smallest_eigenvalue_via_inverse() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.5, 9.0]));
        let inv = m.clone().try_inverse().unwrap();
        assert!((smallest_eigenvalue_from_inverse(&inv) - 0.5).abs() < 1e-9);
    }
}
