//! Closed-form penalized estimators and the conditional covariance of the
//! resulting test statistics.
//!
//! The estimator solves (X'X + M) beta = X'y with effective penalty
//! M = h_G * L + h_2 * I. Grace is h_2 = 0, GraceI is h_G = 0 with L = I
//! semantics, GraceR uses both terms.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::RegressionData;
use crate::graph::PenaltyMatrix;
use crate::linalg::smallest_eigenvalue_from_inverse;

/// Relative tolerance of the solve-residual certificate.
pub const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("penalty has dimension {penalty} but data has {p} covariates")]
    DimensionMismatch { penalty: usize, p: usize },
    #[error("negative tuning parameter {0}")]
    NegativeTuning(f64),
    #[error("system matrix is singular or indefinite (smallest pivot {smallest_pivot:.3e}); consider adding diagonal jitter to the penalty")]
    NotPositiveDefinite { smallest_pivot: f64 },
    #[error("solve residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    ResidualCheck { residual: f64, tol: f64 },
}

/// Penalty specification: M = h_g * L + h_2 * I.
#[derive(Debug, Clone)]
pub struct GracePenaltySpec {
    pub penalty: PenaltyMatrix,
    pub h_g: f64,
    pub h_2: f64,
}

impl GracePenaltySpec {
    pub fn new(penalty: PenaltyMatrix, h_g: f64, h_2: f64) -> Result<Self, FitError> {
        if h_g < 0.0 {
            return Err(FitError::NegativeTuning(h_g));
        }
        if h_2 < 0.0 {
            return Err(FitError::NegativeTuning(h_2));
        }
        Ok(Self { penalty, h_g, h_2 })
    }

    /// Effective penalty matrix M = h_g * L + h_2 * I.
    pub fn effective_penalty(&self) -> DMatrix<f64> {
        let p = self.penalty.dim();
        let mut m = self.penalty.matrix() * self.h_g;
        for j in 0..p {
            m[(j, j)] += self.h_2;
        }
        m
    }
}

/// Solved penalized system, holding the full inverse of A = X'X + M for the
/// repeated row extractions downstream (variance diagonal, stochastic bounds,
/// statistic correction).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    pub h_g: f64,
    pub h_2: f64,
    /// Effective penalty M.
    m: DMatrix<f64>,
    /// Inverse of A = X'X + M.
    a_inv: DMatrix<f64>,
    smallest_pivot: f64,
    /// Noise standard deviation used for variances and scale-invariant bounds.
    pub sigma_eps: f64,
}

impl FitResult {
    pub fn effective_penalty(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn a_inverse(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn smallest_pivot(&self) -> f64 {
        self.smallest_pivot
    }

    /// A^{-1} v.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.a_inv * v
    }

    /// B = A^{-1} M, the matrix whose rows drive the stochastic bounds.
    pub fn correction_matrix(&self) -> DMatrix<f64> {
        &self.a_inv * &self.m
    }
}

/// Solves (X'X + M) beta = X'y by Cholesky factorization, with a positive
/// definiteness verdict and a solve-residual certificate.
pub fn fit(
    data: &RegressionData,
    spec: &GracePenaltySpec,
    sigma_eps: f64,
) -> Result<FitResult, FitError> {
    let p = data.p();
    if spec.penalty.dim() != p {
        return Err(FitError::DimensionMismatch { penalty: spec.penalty.dim(), p });
    }
    let m = spec.effective_penalty();
    let a = data.gram() + &m;
    let trace = a.trace();
    let chol = match a.clone().cholesky() {
        Some(c) => c,
        None => {
            let min_eig =
                a.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(FitError::NotPositiveDefinite { smallest_pivot: min_eig });
        }
    };
    let smallest_pivot = (0..p).map(|j| chol.l_dirty()[(j, j)].powi(2)).fold(f64::INFINITY, f64::min);
    if smallest_pivot <= 1e-10 * trace / p as f64 {
        return Err(FitError::NotPositiveDefinite { smallest_pivot });
    }
    let xty = data.xty();
    let beta_hat = chol.solve(&xty);
    let residual = (&a * &beta_hat - &xty).norm();
    let tol = RESIDUAL_TOL * xty.norm();
    if residual > tol {
        return Err(FitError::ResidualCheck { residual, tol });
    }
    let a_inv = chol.inverse();
    Ok(FitResult { beta_hat, h_g: spec.h_g, h_2: spec.h_2, m, a_inv, smallest_pivot, sigma_eps })
}

/// Conditional variances Var(Z_j | X) = n sigma^2 [A^{-1} Sigma_hat A^{-1}]_(j,j),
/// computed as sigma^2 times squared column norms of X A^{-1}.
pub fn statistic_covariance_diag(fit: &FitResult, data: &RegressionData) -> DVector<f64> {
    let g = data.x() * &fit.a_inv;
    let s2 = fit.sigma_eps * fit.sigma_eps;
    DVector::from_fn(data.p(), |j, _| s2 * g.column(j).norm_squared())
}

/// Worst-case estimation bias ||M beta*||_2 / lambda_0(A), with lambda_0
/// obtained by power iteration on the stored inverse. Diagnostic use with a
/// known true coefficient vector.
pub fn bias_bound(fit: &FitResult, beta_star: &DVector<f64>) -> f64 {
    let numerator = (&fit.m * beta_star).norm();
    if numerator == 0.0 {
        return 0.0;
    }
    numerator / smallest_eigenvalue_from_inverse(&fit.a_inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::standardize;
    use crate::graph::{PenaltyMatrix, WeightedGraph};
    use crate::sim::exact_correlation_design;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn orthonormal_data() -> RegressionData {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let y = DVector::from_vec(vec![1.0, 0.5, -0.25, -1.25]);
        RegressionData::from_parts(x, y, true).unwrap()
    }

    #[test]
    fn diagonal_system_closed_form() {
        let data = orthonormal_data();
        let h = 7.0;
        let spec = GracePenaltySpec::new(PenaltyMatrix::identity(2), 0.0, h).unwrap();
        let f = fit(&data, &spec, 1.0).unwrap();
        for j in 0..2 {
            let expected = data.x().column(j).dot(data.y()) / (4.0 + h);
            assert!((f.beta_hat[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn unpenalized_limit_is_ols() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let x = DMatrix::from_fn(12, 3, |_, _| rng.gen_range(-2.0..2.0_f64));
        let y = DVector::from_fn(12, |_, _| rng.gen_range(-2.0..2.0_f64));
        let (data, _) = standardize(&x, &y).unwrap();
        let spec = GracePenaltySpec::new(PenaltyMatrix::identity(3), 0.0, 0.0).unwrap();
        let f = fit(&data, &spec, 1.0).unwrap();
        let ols = data.gram().cholesky().unwrap().solve(&data.xty());
        assert!((&f.beta_hat - ols).norm() < 1e-10);
    }

    #[test]
    fn p2_instance_matches_direct_inverse() {
        let n = 50;
        let rho = 0.5;
        let x = exact_correlation_design(n, rho, 99);
        let mut rng = ChaCha12Rng::seed_from_u64(100);
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0_f64));
        let ym = y.mean();
        let data = RegressionData::from_parts(x, y.map(|v| v - ym), true).unwrap();
        let l = PenaltyMatrix::custom(DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]))
            .unwrap();
        let h = 50.0;
        let spec = GracePenaltySpec::new(l.clone(), h, 0.0).unwrap();
        let f = fit(&data, &spec, 1.0).unwrap();
        let a = data.gram() + l.matrix() * h;
        let oracle = a.try_inverse().unwrap() * data.xty();
        assert!((&f.beta_hat - oracle).norm() < 1e-10);
    }

    #[test]
    fn variance_diag_orthonormal_closed_form() {
        let data = orthonormal_data();
        let h = 3.0;
        let sigma = 1.7;
        let spec = GracePenaltySpec::new(PenaltyMatrix::identity(2), 0.0, h).unwrap();
        let f = fit(&data, &spec, sigma).unwrap();
        let v = statistic_covariance_diag(&f, &data);
        let n = 4.0;
        let expected = sigma * sigma * n / (n + h).powi(2);
        for j in 0..2 {
            assert!((v[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_diag_p2_closed_form() {
        // Var(Z_1|X) = s^2 [(n^3 + 2hn^2)(1-rho^2) + n h^2 (1 + l^2 - 2 l rho)]
        //              / [(n+h)^2 - (n rho + h l)^2]^2
        let n = 100;
        let (rho, l, h, sigma) = (0.5, 0.5, 100.0, 1.0);
        let x = exact_correlation_design(n, rho, 7);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0_f64));
        let ym = y.mean();
        let data = RegressionData::from_parts(x, y.map(|v| v - ym), true).unwrap();
        let lm = PenaltyMatrix::custom(DMatrix::from_row_slice(2, 2, &[1.0, l, l, 1.0])).unwrap();
        let spec = GracePenaltySpec::new(lm, h, 0.0).unwrap();
        let f = fit(&data, &spec, sigma).unwrap();
        let v = statistic_covariance_diag(&f, &data);
        let nf = n as f64;
        let num = (nf.powi(3) + 2.0 * h * nf * nf) * (1.0 - rho * rho)
            + nf * h * h * (1.0 + l * l - 2.0 * l * rho);
        let den = ((nf + h).powi(2) - (nf * rho + h * l).powi(2)).powi(2);
        let expected = sigma * sigma * num / den;
        assert!(
            (v[0] - expected).abs() < 1e-8 * expected,
            "got {} expected {expected}",
            v[0]
        );
    }

    #[test]
    fn variances_shrink_as_h_grows() {
        let data = orthonormal_data();
        let mut last = f64::INFINITY;
        for &h in &[1e2, 1e4, 1e6] {
            let spec = GracePenaltySpec::new(PenaltyMatrix::identity(2), 0.0, h).unwrap();
            let f = fit(&data, &spec, 1.0).unwrap();
            let v = statistic_covariance_diag(&f, &data).max();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn bias_bound_zero_cases() {
        let data = orthonormal_data();
        let g = WeightedGraph::new(2, vec![(0, 1, 1.0)]).unwrap();
        let l = PenaltyMatrix::laplacian(&g, 0.0);
        // L beta* = 0 for constant beta*
        let spec = GracePenaltySpec::new(l.clone(), 5.0, 0.1).unwrap();
        let f = fit(&data, &spec, 1.0).unwrap();
        // beta* constant is in the Laplacian null space only when h_2 = 0
        let spec0 = GracePenaltySpec::new(l.clone(), 5.0, 0.0).unwrap();
        let f0 = fit(&data, &spec0, 1.0).unwrap();
        assert_eq!(bias_bound(&f0, &DVector::from_vec(vec![2.0, 2.0])), 0.0);
        assert!(bias_bound(&f, &DVector::from_vec(vec![2.0, 2.0])) > 0.0);
        // h = 0 gives M = 0
        let spec_h0 = GracePenaltySpec::new(l, 0.0, 0.0).unwrap();
        let f_h0 = fit(&data, &spec_h0, 1.0).unwrap();
        assert_eq!(bias_bound(&f_h0, &DVector::from_vec(vec![1.0, -1.0])), 0.0);
    }

    #[test]
    fn bias_bound_p2_closed_form() {
        let data = orthonormal_data();
        let g = WeightedGraph::new(2, vec![(0, 1, 1.0)]).unwrap();
        let l = PenaltyMatrix::laplacian(&g, 0.0);
        let h = 3.0;
        let spec = GracePenaltySpec::new(l.clone(), h, 0.0).unwrap();
        let f = fit(&data, &spec, 1.0).unwrap();
        let beta_star = DVector::from_vec(vec![1.0, 0.0]);
        // A = X'X + hL is symmetric 2x2; closed-form eigenvalues
        let a = data.gram() + l.matrix() * h;
        let (a11, a12, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 1)]);
        let mean = (a11 + a22) / 2.0;
        let disc = ((a11 - a22) / 2.0).powi(2) + a12 * a12;
        let lambda0 = mean - disc.sqrt();
        let expected = h * 2.0_f64.sqrt() / lambda0;
        let got = bias_bound(&f, &beta_star);
        assert!((got - expected).abs() < 1e-8 * expected);
    }

    #[test]
    fn two_penalty_form_equals_custom_combined_penalty() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(10, 4, |_, _| rng.gen_range(-2.0..2.0_f64));
        let y = DVector::from_fn(10, |_, _| rng.gen_range(-2.0..2.0_f64));
        let (data, _) = standardize(&x, &y).unwrap();
        let g = WeightedGraph::new(4, vec![(0, 1, 1.0), (1, 2, 0.5), (2, 3, 2.0)]).unwrap();
        let l = PenaltyMatrix::laplacian(&g, 0.0);
        let (h_g, h_2) = (3.0, 0.7);
        let spec = GracePenaltySpec::new(l.clone(), h_g, h_2).unwrap();
        let combined = PenaltyMatrix::custom(spec.effective_penalty()).unwrap();
        let spec_c = GracePenaltySpec::new(combined, 1.0, 0.0).unwrap();
        let f1 = fit(&data, &spec, 1.0).unwrap();
        let f2 = fit(&data, &spec_c, 1.0).unwrap();
        assert!((&f1.beta_hat - &f2.beta_hat).norm() < 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        // p > n with a rank-deficient penalty and no jitter
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let x = DMatrix::from_fn(3, 6, |_, _| rng.gen_range(-2.0..2.0_f64));
        let y = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0_f64));
        let data = RegressionData::from_parts(x, y, false).unwrap();
        // Laplacian of a graph with isolated nodes is singular
        let g = WeightedGraph::new(6, vec![(0, 1, 1.0)]).unwrap();
        let l = PenaltyMatrix::laplacian(&g, 0.0);
        let spec = GracePenaltySpec::new(l, 2.0, 0.0).unwrap();
        assert!(matches!(
            fit(&data, &spec, 1.0),
            Err(FitError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let data = orthonormal_data();
        let spec = GracePenaltySpec::new(PenaltyMatrix::identity(3), 0.0, 1.0).unwrap();
        assert!(matches!(fit(&data, &spec, 1.0), Err(FitError::DimensionMismatch { .. })));
    }
}
