//! End-to-end single-dataset testing pipeline shared by the CLI and the
//! integration tests: standardize, estimate noise, tune, fit, test.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cv::{cross_validate, CvError, CvPlan, CvSelection};
use crate::data::{standardize, DataError};
use crate::grace::{fit, statistic_covariance_diag, FitError, GracePenaltySpec};
use crate::graph::{GraphError, PenaltyMatrix, WeightedGraph};
use crate::inference::{
    gamma_bound, grace_statistic, build_report, Correction, InferenceError, Method, TestConfig,
    TestReport,
};
use crate::lasso::{
    default_lasso_lambda, default_scaled_lasso_lambda0, kkt_violation, lasso, scaled_lasso,
    LassoError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Cv(#[from] CvError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("method {0:?} needs a graph edge list")]
    MissingGraph(Method),
    #[error("graph covers {nodes} nodes but the design has {p} covariates")]
    GraphSizeMismatch { nodes: usize, p: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyChoice {
    Laplacian,
    NormalizedLaplacian,
    Identity,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub method: Method,
    pub penalty: PenaltyChoice,
    pub jitter: f64,
    pub test: TestConfig,
    pub correction: Correction,
    /// Overrides for the CV grids; None picks the method's default shape.
    pub grid_g: Option<Vec<f64>>,
    pub grid_2: Option<Vec<f64>>,
    pub folds: usize,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(method: Method) -> Self {
        let penalty = match method {
            Method::GraceI | Method::Ridge => PenaltyChoice::Identity,
            _ => PenaltyChoice::Laplacian,
        };
        Self {
            method,
            penalty,
            jitter: 0.0,
            test: TestConfig::default(),
            correction: Correction::By,
            grid_g: None,
            grid_2: None,
            folds: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: TestReport,
    pub sigma_hat: f64,
    pub lasso_lambda: f64,
    pub lasso_kkt: f64,
    pub h_g: f64,
    pub h_2: f64,
    pub cv: Option<CvSelection>,
}

fn build_penalty(
    cfg: &PipelineConfig,
    graph: Option<&WeightedGraph>,
    p: usize,
) -> Result<PenaltyMatrix, PipelineError> {
    if cfg.penalty == PenaltyChoice::Identity {
        return Ok(PenaltyMatrix::identity(p));
    }
    let g = graph.ok_or(PipelineError::MissingGraph(cfg.method))?;
    if g.num_nodes() != p {
        return Err(PipelineError::GraphSizeMismatch { nodes: g.num_nodes(), p });
    }
    Ok(match cfg.penalty {
        PenaltyChoice::Laplacian => PenaltyMatrix::laplacian(g, cfg.jitter),
        PenaltyChoice::NormalizedLaplacian => PenaltyMatrix::normalized_laplacian(g, cfg.jitter),
        PenaltyChoice::Identity => unreachable!(),
    })
}

fn cv_plan(cfg: &PipelineConfig) -> CvPlan {
    let default = || CvPlan::default_grid(20);
    let (grid_g, grid_2) = match cfg.method {
        Method::Grace => (
            cfg.grid_g.clone().unwrap_or_else(default),
            cfg.grid_2.clone().unwrap_or_else(|| vec![0.0]),
        ),
        Method::GraceR => (
            cfg.grid_g.clone().unwrap_or_else(default),
            cfg.grid_2.clone().unwrap_or_else(default),
        ),
        Method::GraceI => (
            cfg.grid_g.clone().unwrap_or_else(|| vec![0.0]),
            cfg.grid_2.clone().unwrap_or_else(default),
        ),
        Method::Ridge => (vec![0.0], vec![1.0]),
    };
    CvPlan { folds: cfg.folds, grid_g, grid_2, rng_seed: cfg.seed }
}

/// Full testing pipeline on raw (unstandardized) inputs.
pub fn run_test(
    x_raw: &DMatrix<f64>,
    y_raw: &DVector<f64>,
    graph: Option<&WeightedGraph>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    cfg.test.validate()?;
    let (data, _) = standardize(x_raw, y_raw)?;
    let (n, p) = (data.n(), data.p());
    let penalty = build_penalty(cfg, graph, p)?;

    let noise = scaled_lasso(&data, default_scaled_lasso_lambda0(n, p))?;
    let sigma_hat = noise.sigma;
    let lasso_lambda = default_lasso_lambda(sigma_hat, n, p);
    let lasso_fit = lasso(&data, lasso_lambda)?;
    let lasso_kkt = kkt_violation(&data, &lasso_fit.beta, lasso_lambda);

    let (h_g, h_2, cv) = if cfg.method == Method::Ridge {
        (0.0, 1.0, None)
    } else {
        let sel = cross_validate(&data, &penalty, &cv_plan(cfg))?;
        (sel.h_g, sel.h_2, Some(sel))
    };

    let spec = GracePenaltySpec::new(penalty, h_g, h_2)?;
    let f = fit(&data, &spec, sigma_hat)?;
    let z = grace_statistic(&f, &lasso_fit.beta)?;
    let gamma = if cfg.method == Method::Ridge {
        DVector::zeros(p)
    } else {
        gamma_bound(&f, &cfg.test, n, p)
    };
    let sd = statistic_covariance_diag(&f, &data).map(f64::sqrt);
    let report =
        build_report(cfg.method, &z, &gamma, &sd, cfg.correction, cfg.test.alpha, sigma_hat)?;
    Ok(PipelineOutput { report, sigma_hat, lasso_lambda, lasso_kkt, h_g, h_2, cv })
}
