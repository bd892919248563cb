//! Bias-corrected test statistics, stochastic bounds, p-values,
//! multiple-testing corrections, and the two-covariate power analytics.

use nalgebra::DVector;
use thiserror::Error;

use crate::data::RegressionData;
use crate::grace::FitResult;
use crate::stats::{normal_cdf, normal_quantile};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("statistic has dimension {fit} but initial estimator has {beta}")]
    DimensionMismatch { fit: usize, beta: usize },
    #[error("nonpositive standard deviation {sd} at covariate {index}")]
    NonPositiveSd { index: usize, sd: f64 },
    #[error("p-value {value} at position {index} outside [0, 1]")]
    PValueOutOfRange { index: usize, value: f64 },
    #[error("upsilon denominator is nonpositive (k = {k}, l = {l}, rho = {rho})")]
    DegenerateDenominator { k: f64, l: f64, rho: f64 },
    #[error("invalid test configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundVariant {
    /// Row maximum excluding the diagonal entry.
    Offdiag,
    /// The looser full-row maximum, which needs no diagonal-decay assumption.
    Fullrow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correction {
    None,
    By,
    Holm,
}

impl Correction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Correction::None => "none",
            Correction::By => "by",
            Correction::Holm => "holm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Grace,
    GraceR,
    GraceI,
    Ridge,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Grace => "grace",
            Method::GraceR => "gracer",
            Method::GraceI => "gracei",
            Method::Ridge => "ridge",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TestConfig {
    /// Sparsity exponent in (0, 1/2).
    pub xi: f64,
    pub bound_variant: BoundVariant,
    /// Multiply the bound by sigma_eps for scale-invariant testing.
    pub scale_invariant: bool,
    /// Two-sided level.
    pub alpha: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { xi: 0.05, bound_variant: BoundVariant::Offdiag, scale_invariant: false, alpha: 0.05 }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.xi > 0.0 && self.xi < 0.5) {
            return Err(InferenceError::InvalidConfig(format!("xi must be in (0, 0.5), got {}", self.xi)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(InferenceError::InvalidConfig(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Per-covariate test outcome.
#[derive(Debug, Clone)]
pub struct TestRow {
    pub z_hat: f64,
    pub gamma: f64,
    pub sd: f64,
    pub p_raw: f64,
    pub p_adj: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone)]
pub struct TestReport {
    pub rows: Vec<TestRow>,
    pub method: Method,
    pub correction: Correction,
    pub sigma_used: f64,
}

impl TestReport {
    /// CSV with covariates in input order (1-based indices) and full
    /// double-precision scientific notation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("covariate,z,gamma,sd,p_raw,p_adj,rejected\n");
        for (j, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                j + 1,
                r.z_hat,
                r.gamma,
                r.sd,
                r.p_raw,
                r.p_adj,
                r.rejected
            ));
        }
        out
    }
}

/// Bias-corrected statistic z = beta_hat + A^{-1} M beta_tilde.
pub fn grace_statistic(
    fit: &FitResult,
    beta_tilde: &DVector<f64>,
) -> Result<DVector<f64>, InferenceError> {
    let p = fit.beta_hat.len();
    if beta_tilde.len() != p {
        return Err(InferenceError::DimensionMismatch { fit: p, beta: beta_tilde.len() });
    }
    let correction = fit.solve(&(fit.effective_penalty() * beta_tilde));
    Ok(&fit.beta_hat + correction)
}

/// Stochastic bias bounds Gamma_j = ||B_(j,.)||_inf * (log p / n)^(1/2 - xi)
/// with B = A^{-1} M, the row maximum taken with or without the diagonal
/// entry. Multiplied by sigma_eps in the scale-invariant variant.
pub fn gamma_bound(fit: &FitResult, config: &TestConfig, n: usize, p: usize) -> DVector<f64> {
    let b = fit.correction_matrix();
    let rate = ((p as f64).ln() / n as f64).powf(0.5 - config.xi);
    let scale = if config.scale_invariant { fit.sigma_eps } else { 1.0 };
    DVector::from_fn(b.nrows(), |j, _| {
        let mut m = 0.0_f64;
        for i in 0..b.ncols() {
            if i == j && config.bound_variant == BoundVariant::Offdiag {
                continue;
            }
            m = m.max(b[(j, i)].abs());
        }
        m * rate * scale
    })
}

/// Two-sided p-values P_j = 2 (1 - Phi[(|z_j| - Gamma_j)_+ / sd_j]).
pub fn p_values(
    z: &DVector<f64>,
    gamma: &DVector<f64>,
    sd: &DVector<f64>,
) -> Result<DVector<f64>, InferenceError> {
    let mut out = DVector::zeros(z.len());
    for j in 0..z.len() {
        if sd[j] <= 0.0 {
            return Err(InferenceError::NonPositiveSd { index: j, sd: sd[j] });
        }
        let num = (z[j].abs() - gamma[j]).max(0.0);
        out[j] = 2.0 * (1.0 - normal_cdf(num / sd[j]));
    }
    Ok(out)
}

fn check_p_range(p_raw: &[f64]) -> Result<(), InferenceError> {
    for (i, &v) in p_raw.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(InferenceError::PValueOutOfRange { index: i, value: v });
        }
    }
    Ok(())
}

/// Benjamini-Yekutieli step-up adjustment with dependency factor
/// c(m) = sum_{i=1..m} 1/i, order-preserving.
pub fn adjust_by(p_raw: &[f64]) -> Result<Vec<f64>, InferenceError> {
    check_p_range(p_raw)?;
    let m = p_raw.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let c: f64 = (1..=m).map(|i| 1.0 / i as f64).sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_raw[a].partial_cmp(&p_raw[b]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running_min = 1.0_f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        let candidate = (m as f64 * c * p_raw[idx] / (rank + 1) as f64).min(1.0);
        running_min = running_min.min(candidate);
        adjusted[idx] = running_min;
    }
    Ok(adjusted)
}

/// Holm step-down adjustment, order-preserving, capped at 1, monotone.
pub fn adjust_holm(p_raw: &[f64]) -> Result<Vec<f64>, InferenceError> {
    check_p_range(p_raw)?;
    let m = p_raw.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_raw[a].partial_cmp(&p_raw[b]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running_max = 0.0_f64;
    for (rank, &idx) in order.iter().enumerate() {
        let candidate = ((m - rank) as f64 * p_raw[idx]).min(1.0);
        running_max = running_max.max(candidate);
        adjusted[idx] = running_max;
    }
    Ok(adjusted)
}

/// Applies the chosen correction and builds the per-covariate report.
pub fn build_report(
    method: Method,
    z: &DVector<f64>,
    gamma: &DVector<f64>,
    sd: &DVector<f64>,
    correction: Correction,
    alpha: f64,
    sigma_used: f64,
) -> Result<TestReport, InferenceError> {
    let p_raw = p_values(z, gamma, sd)?;
    let raw: Vec<f64> = p_raw.iter().cloned().collect();
    let p_adj = match correction {
        Correction::None => raw.clone(),
        Correction::By => adjust_by(&raw)?,
        Correction::Holm => adjust_holm(&raw)?,
    };
    let rows = (0..z.len())
        .map(|j| TestRow {
            z_hat: z[j],
            gamma: gamma[j],
            sd: sd[j],
            p_raw: raw[j],
            p_adj: p_adj[j],
            rejected: p_adj[j] <= alpha,
        })
        .collect();
    Ok(TestReport { rows, method, correction, sigma_used })
}

/// Sufficient detection size per covariate for asymptotic power one:
/// 2 Gamma_j + q_(1-alpha/2) sd_j + q_(1-psi/2).
pub fn detection_threshold(
    fit: &FitResult,
    data: &RegressionData,
    config: &TestConfig,
    psi: f64,
) -> Result<DVector<f64>, InferenceError> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(InferenceError::InvalidConfig(format!("psi must be in (0, 1), got {psi}")));
    }
    config.validate()?;
    let gamma = gamma_bound(fit, config, data.n(), data.p());
    let sd = crate::grace::statistic_covariance_diag(fit, data).map(|v| v.sqrt());
    let q_alpha = normal_quantile(1.0 - config.alpha / 2.0);
    let q_psi = normal_quantile(1.0 - psi / 2.0);
    Ok(DVector::from_fn(gamma.len(), |j, _| 2.0 * gamma[j] + q_alpha * sd[j] + q_psi))
}

/// Two-covariate power functional: with k = h/n and t = (log p / n)^(1/2-xi),
///
///   Upsilon = { [(k+1)^2 - (rho + l k)^2] |b1| - t |k (l - rho)| }
///             / sqrt{ (1 + 2k)(1 - rho^2) + k^2 (1 + l^2 - 2 l rho) }.
pub fn upsilon(
    k: f64,
    l: f64,
    rho: f64,
    beta1_abs: f64,
    t: f64,
) -> Result<f64, InferenceError> {
    let denom_sq = (1.0 + 2.0 * k) * (1.0 - rho * rho) + k * k * (1.0 + l * l - 2.0 * l * rho);
    if denom_sq <= 0.0 {
        return Err(InferenceError::DegenerateDenominator { k, l, rho });
    }
    let numer = ((k + 1.0).powi(2) - (rho + l * k).powi(2)) * beta1_abs - t * (k * (l - rho)).abs();
    Ok(numer / denom_sq.sqrt())
}

/// Root of l^3 - 3l + 2 rho = 0 inside [-1, 1], by bisection to 1e-10.
/// Below this root (for l between 0 and l*) the graph penalty dominates the
/// identity penalty at equal, large tuning parameters.
pub fn grace_vs_gracei_boundary(rho: f64) -> f64 {
    let f = |l: f64| l.powi(3) - 3.0 * l + 2.0 * rho;
    // f(-1) = 2 + 2 rho >= 0, f(1) = 2 rho - 2 <= 0
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridClass {
    Plus,
    Minus,
    Intermediate,
}

impl GridClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridClass::Plus => "+",
            GridClass::Minus => "-",
            GridClass::Intermediate => "o",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Figure1Record {
    pub l: f64,
    pub rho: f64,
    pub value: f64,
    pub class: GridClass,
}

#[derive(Debug, Clone)]
pub struct Figure1Grid {
    /// Panel (a): ratio Upsilon(k, l, rho) / Upsilon(k, 0, rho),
    /// classified at 1.02 / 0.98.
    pub panel_a: Vec<Figure1Record>,
    /// Panel (b): log of Upsilon(k, l, rho) / (sqrt(1 - rho^2) |b1|),
    /// classified at +/- 0.5.
    pub panel_b: Vec<Figure1Record>,
}

/// Evaluates both comparison panels over an (l, rho) grid.
/// Grid points with |rho| = 1 are rejected as degenerate.
pub fn figure1_grid(
    k: f64,
    beta1_abs: f64,
    t: f64,
    l_grid: &[f64],
    rho_grid: &[f64],
) -> Result<Figure1Grid, InferenceError> {
    let mut panel_a = Vec::with_capacity(l_grid.len() * rho_grid.len());
    let mut panel_b = Vec::with_capacity(l_grid.len() * rho_grid.len());
    for &rho in rho_grid {
        if rho.abs() >= 1.0 {
            return Err(InferenceError::DegenerateDenominator { k, l: f64::NAN, rho });
        }
        let denom_gi = upsilon(k, 0.0, rho, beta1_abs, t)?;
        let ridge_level = (1.0 - rho * rho).sqrt() * beta1_abs;
        for &l in l_grid {
            let u = upsilon(k, l, rho, beta1_abs, t)?;
            let ratio = u / denom_gi;
            let class_a = if ratio > 1.02 {
                GridClass::Plus
            } else if ratio < 0.98 {
                GridClass::Minus
            } else {
                GridClass::Intermediate
            };
            panel_a.push(Figure1Record { l, rho, value: ratio, class: class_a });
            let log_ratio = (u / ridge_level).ln();
            let class_b = if log_ratio > 0.5 {
                GridClass::Plus
            } else if log_ratio < -0.5 {
                GridClass::Minus
            } else {
                GridClass::Intermediate
            };
            panel_b.push(Figure1Record { l, rho, value: log_ratio, class: class_b });
        }
    }
    Ok(Figure1Grid { panel_a, panel_b })
}

/// Evenly spaced grid avoiding the degenerate |value| = 1 endpoints.
pub fn default_figure1_axis(points: usize) -> Vec<f64> {
    let lo = -0.95;
    let hi = 0.95;
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points.saturating_sub(1).max(1)) as f64)
        .collect()
}
