//! Regression data and the centering/scaling convention: y centered,
//! every design column centered with x_j'x_j = n.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),
    #[error("X has {x_rows} rows but y has {y_len} entries")]
    DimensionMismatch { x_rows: usize, y_len: usize },
}

/// Centered response and standardized design.
#[derive(Debug, Clone)]
pub struct RegressionData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    standardized: bool,
}

/// Constants needed to map standardized coefficients back to the raw scale.
#[derive(Debug, Clone)]
pub struct Standardization {
    pub y_mean: f64,
    pub col_means: DVector<f64>,
    /// Per-column scale s_j with standardized x_j = (raw_j - mean_j) / s_j,
    /// chosen so that x_j'x_j = n.
    pub col_scales: DVector<f64>,
}

impl RegressionData {
    /// Wraps already-prepared data without re-standardizing.
    pub fn from_parts(x: DMatrix<f64>, y: DVector<f64>, standardized: bool) -> Result<Self, DataError> {
        if x.nrows() != y.len() {
            return Err(DataError::DimensionMismatch { x_rows: x.nrows(), y_len: y.len() });
        }
        Ok(Self { x, y, standardized })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Gram matrix X'X (equal to n * Sigma_hat).
    pub fn gram(&self) -> DMatrix<f64> {
        self.x.transpose() * &self.x
    }

    pub fn xty(&self) -> DVector<f64> {
        self.x.transpose() * &self.y
    }
}

/// Centers y, and centers and scales every column of X so x_j'x_j = n.
/// Returns the data together with the constants needed to undo the mapping.
pub fn standardize(
    x_raw: &DMatrix<f64>,
    y_raw: &DVector<f64>,
) -> Result<(RegressionData, Standardization), DataError> {
    let n = x_raw.nrows();
    let p = x_raw.ncols();
    if n < 2 {
        return Err(DataError::TooFewSamples(n));
    }
    if n != y_raw.len() {
        return Err(DataError::DimensionMismatch { x_rows: n, y_len: y_raw.len() });
    }
    let y_mean = y_raw.mean();
    let y = y_raw.map(|v| v - y_mean);

    let mut x = x_raw.clone();
    let mut col_means = DVector::zeros(p);
    let mut col_scales = DVector::zeros(p);
    for j in 0..p {
        let mean = x.column(j).mean();
        let ss: f64 = x.column(j).iter().map(|&v| (v - mean).powi(2)).sum();
        if ss <= 0.0 {
            return Err(DataError::ZeroVarianceColumn(j));
        }
        // scale so the centered column has squared norm n
        let scale = (ss / n as f64).sqrt();
        for i in 0..n {
            x[(i, j)] = (x[(i, j)] - mean) / scale;
        }
        col_means[j] = mean;
        col_scales[j] = scale;
    }
    Ok((
        RegressionData { x, y, standardized: true },
        Standardization { y_mean, col_means, col_scales },
    ))
}
