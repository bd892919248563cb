//! Hub-satellite simulation study: data generation, replicate orchestration,
//! and power / type-I aggregation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::cv::{cross_validate, CvPlan};
use crate::data::standardize;
use crate::grace::{fit, statistic_covariance_diag, GracePenaltySpec};
use crate::graph::{GraphError, PenaltyMatrix, WeightedGraph};
use crate::inference::{gamma_bound, grace_statistic, p_values, Method, TestConfig};
use crate::lasso::{default_lasso_lambda, default_scaled_lasso_lambda0, lasso, scaled_lasso};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("covariance factorization failed")]
    CovarianceFactorization,
    #[error("{failed} of {total} replicates failed (over the 10% budget); first error: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for (replicate, purpose); adding purposes never
/// perturbs other streams.
pub fn derive_seed(master: u64, replicate: u64, purpose: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ replicate) ^ purpose)
}

const PURPOSE_DATA: u64 = 0x01;
const PURPOSE_PERTURB: u64 = 0x1000;
const PURPOSE_CV: u64 = 0x2000;

/// Two centered columns with exact sample moments: x_j'x_j = n and
/// x_1'x_2 = n*rho. Gram-Schmidt on a random Gaussian pair.
pub fn exact_correlation_design(n: usize, rho: f64, seed: u64) -> DMatrix<f64> {
    assert!(n >= 3, "need at least 3 samples");
    assert!(rho.abs() < 1.0, "|rho| must be < 1");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha12Rng| -> DVector<f64> {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = v.mean();
        v.map(|x| x - m)
    };
    let u1 = {
        let v = draw(&mut rng);
        let norm = v.norm();
        assert!(norm > 1e-8);
        v / norm
    };
    let u2 = {
        let mut v = draw(&mut rng);
        v -= &u1 * u1.dot(&v);
        let norm = v.norm();
        assert!(norm > 1e-8);
        v / norm
    };
    let s = (n as f64).sqrt();
    let x1 = &u1 * s;
    let x2 = (&u1 * rho + &u2 * (1.0 - rho * rho).sqrt()) * s;
    DMatrix::from_fn(n, 2, |i, j| if j == 0 { x1[i] } else { x2[i] })
}

#[derive(Debug, Clone)]
pub struct SimDesign {
    pub hubs: usize,
    pub satellites_per_hub: usize,
    pub n: usize,
    pub sigma_eps: f64,
    pub npe_list: Vec<i64>,
    pub replicates: usize,
    pub seed: u64,
    /// When set, beta* = 0 and the power section of the report is empty.
    pub null_model: bool,
    pub folds: usize,
    pub grid_points: usize,
}

impl SimDesign {
    pub fn defaults(sigma_eps: f64, replicates: usize, seed: u64) -> Self {
        Self {
            hubs: 50,
            satellites_per_hub: 9,
            n: 100,
            sigma_eps,
            npe_list: vec![0],
            replicates,
            seed,
            null_model: false,
            folds: 10,
            grid_points: 20,
        }
    }

    pub fn p(&self) -> usize {
        self.hubs * (1 + self.satellites_per_hub)
    }

    fn cluster_size(&self) -> usize {
        1 + self.satellites_per_hub
    }

    /// First-cluster support size (0 in the null model).
    pub fn support_size(&self) -> usize {
        if self.null_model {
            0
        } else {
            self.cluster_size()
        }
    }

    /// beta* with value 1/sqrt(c) on the first cluster's c covariates.
    pub fn beta_star(&self) -> DVector<f64> {
        let mut beta = DVector::zeros(self.p());
        if !self.null_model {
            let c = self.cluster_size();
            let v = 1.0 / (c as f64).sqrt();
            for j in 0..c {
                beta[j] = v;
            }
        }
        beta
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.hubs == 0 || self.satellites_per_hub == 0 {
            return Err(SimError::InvalidDesign("need at least one hub and satellite".into()));
        }
        if self.sigma_eps <= 0.0 {
            return Err(SimError::InvalidDesign("sigma_eps must be positive".into()));
        }
        if self.n < self.folds || self.folds < 2 {
            return Err(SimError::InvalidDesign(format!(
                "fold count {} invalid for n = {}",
                self.folds, self.n
            )));
        }
        if self.replicates == 0 {
            return Err(SimError::InvalidDesign("need at least one replicate".into()));
        }
        Ok(())
    }

    /// Population R^2 = beta*' Sigma beta* / (beta*' Sigma beta* + sigma^2).
    pub fn population_r2(&self) -> Result<f64, SimError> {
        if self.null_model {
            return Ok(0.0);
        }
        let l_star = hub_satellite_graph(self.hubs, self.satellites_per_hub)?;
        let k = covariance_precision(&PenaltyMatrix::laplacian(&l_star, 0.0));
        let chol = k.cholesky().ok_or(SimError::CovarianceFactorization)?;
        let beta = self.beta_star();
        let signal = beta.dot(&chol.solve(&beta));
        Ok(signal / (signal + self.sigma_eps * self.sigma_eps))
    }
}

/// Disjoint star clusters: hub c at node c*(1+s), its satellites following,
/// unit edge weights.
pub fn hub_satellite_graph(hubs: usize, satellites_per_hub: usize) -> Result<WeightedGraph, GraphError> {
    let cluster = 1 + satellites_per_hub;
    let mut edges = Vec::with_capacity(hubs * satellites_per_hub);
    for c in 0..hubs {
        let hub = c * cluster;
        for s in 1..cluster {
            edges.push((hub, hub + s, 1.0));
        }
    }
    WeightedGraph::new(hubs * cluster, edges)
}

fn covariance_precision(l_star: &PenaltyMatrix) -> DMatrix<f64> {
    let mut k = l_star.matrix().clone();
    for j in 0..k.nrows() {
        k[(j, j)] += 0.11;
    }
    k
}

/// Draws (X, y) with rows of X iid N(0, (L* + 0.11 I)^{-1}) and
/// y = X beta* + N(0, sigma^2 I), deterministic given the seed.
pub fn generate_data(
    design: &SimDesign,
    l_star: &PenaltyMatrix,
    rep_seed: u64,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>), SimError> {
    let p = design.p();
    let n = design.n;
    if l_star.dim() != p {
        return Err(SimError::InvalidDesign(format!(
            "penalty dimension {} does not match p = {p}",
            l_star.dim()
        )));
    }
    let chol = covariance_precision(l_star)
        .cholesky()
        .ok_or(SimError::CovarianceFactorization)?;
    let mut rng = ChaCha12Rng::seed_from_u64(rep_seed);
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    // row x_i = C^{-T} z_i with K = C C', so Cov(x) = K^{-1}; in matrix form
    // C' X' = Z', i.e. X = (U^{-1} Z')' with U = C' upper triangular
    let u = chol.l().transpose();
    let xt = u
        .solve_upper_triangular(&z.transpose())
        .ok_or(SimError::CovarianceFactorization)?;
    let x = xt.transpose();
    let beta = design.beta_star();
    let eps =
        DVector::from_fn(n, |_, _| design.sigma_eps * rng.sample::<f64, _>(StandardNormal));
    let y = &x * &beta + eps;
    Ok((x, y, beta))
}

#[derive(Debug, Clone)]
pub struct SimRow {
    pub method: Method,
    pub npe: i64,
    pub r2: f64,
    /// None in the null model (no nonzero coefficients).
    pub power_mean: Option<f64>,
    pub power_se: Option<f64>,
    pub level_mean: f64,
    pub level_se: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub rows: Vec<SimRow>,
    /// Replicates dropped for numerical failures.
    pub failed_replicates: usize,
}

impl SimReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,npe,r2,power_mean,power_se,level_mean,level_se,replicates\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.17e},{},{},{:.17e},{},{}\n",
                r.method.as_str(),
                r.npe,
                r.r2,
                opt(r.power_mean),
                opt(r.power_se),
                r.level_mean,
                opt(r.level_se),
                r.replicates
            ));
        }
        out
    }

    /// Long-format plot data: one row per (method, npe, metric) with a 95%
    /// normal band.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("method,npe,metric,mean,lo95,hi95\n");
        for r in &self.rows {
            let mut push = |metric: &str, mean: f64, se: Option<f64>| {
                let half = 1.96 * se.unwrap_or(0.0);
                out.push_str(&format!(
                    "{},{},{metric},{:.17e},{:.17e},{:.17e}\n",
                    r.method.as_str(),
                    r.npe,
                    mean,
                    mean - half,
                    mean + half
                ));
            };
            if let Some(p) = r.power_mean {
                push("power", p, r.power_se);
            }
            push("level", r.level_mean, r.level_se);
        }
        out
    }
}

struct RepOutcome {
    /// (method, npe) -> (power over support or NaN, level over nulls).
    cells: Vec<(Method, i64, f64, f64)>,
}

fn rejection_rates(p_raw: &DVector<f64>, support: usize, alpha: f64) -> (f64, f64) {
    let p = p_raw.len();
    let power = if support == 0 {
        f64::NAN
    } else {
        (0..support).filter(|&j| p_raw[j] <= alpha).count() as f64 / support as f64
    };
    let nulls = p - support;
    let level = if nulls == 0 {
        0.0
    } else {
        (support..p).filter(|&j| p_raw[j] <= alpha).count() as f64 / nulls as f64
    };
    (power, level)
}

fn method_tag(method: Method) -> u64 {
    match method {
        Method::Grace => 1,
        Method::GraceR => 2,
        Method::GraceI => 3,
        Method::Ridge => 4,
    }
}

fn run_replicate(
    design: &SimDesign,
    l_star_graph: &WeightedGraph,
    methods: &[Method],
    config: &TestConfig,
    rep: usize,
) -> Result<RepOutcome, String> {
    let n = design.n;
    let p = design.p();
    let support = design.support_size();
    let l_star = PenaltyMatrix::laplacian(l_star_graph, 0.0);
    let (x_raw, y_raw, _) =
        generate_data(design, &l_star, derive_seed(design.seed, rep as u64, PURPOSE_DATA))
            .map_err(|e| e.to_string())?;
    let (data, _) = standardize(&x_raw, &y_raw).map_err(|e| e.to_string())?;

    let noise = scaled_lasso(&data, default_scaled_lasso_lambda0(n, p))
        .map_err(|e| e.to_string())?;
    let sigma_hat = noise.sigma;
    let beta_tilde = lasso(&data, default_lasso_lambda(sigma_hat, n, p))
        .map_err(|e| e.to_string())?
        .beta;

    let mut cells = Vec::new();
    let test_once = |penalty: PenaltyMatrix, h_g: f64, h_2: f64, gamma_zero: bool| {
        let spec = GracePenaltySpec::new(penalty, h_g, h_2).map_err(|e| e.to_string())?;
        let f = fit(&data, &spec, sigma_hat).map_err(|e| e.to_string())?;
        let z = grace_statistic(&f, &beta_tilde).map_err(|e| e.to_string())?;
        let gamma = if gamma_zero {
            DVector::zeros(p)
        } else {
            gamma_bound(&f, config, n, p)
        };
        let sd = statistic_covariance_diag(&f, &data).map(f64::sqrt);
        let p_raw = p_values(&z, &gamma, &sd).map_err(|e| e.to_string())?;
        Ok::<(f64, f64), String>(rejection_rates(&p_raw, support, config.alpha))
    };

    for &method in methods {
        match method {
            Method::GraceI => {
                let plan = CvPlan {
                    folds: design.folds,
                    grid_g: vec![0.0],
                    grid_2: CvPlan::default_grid(design.grid_points),
                    rng_seed: derive_seed(design.seed, rep as u64, PURPOSE_CV ^ method_tag(method)),
                };
                let sel = cross_validate(&data, &PenaltyMatrix::identity(p), &plan)
                    .map_err(|e| e.to_string())?;
                let (pw, lv) = test_once(PenaltyMatrix::identity(p), 0.0, sel.h_2, false)?;
                for &npe in &design.npe_list {
                    cells.push((method, npe, pw, lv));
                }
            }
            Method::Ridge => {
                let (pw, lv) = test_once(PenaltyMatrix::identity(p), 0.0, 1.0, true)?;
                for &npe in &design.npe_list {
                    cells.push((method, npe, pw, lv));
                }
            }
            Method::Grace | Method::GraceR => {
                for (npe_idx, &npe) in design.npe_list.iter().enumerate() {
                    let graph = l_star_graph
                        .perturb_edges(
                            npe,
                            derive_seed(design.seed, rep as u64, PURPOSE_PERTURB + npe_idx as u64),
                        )
                        .map_err(|e| e.to_string())?;
                    let (penalty, plan) = if method == Method::Grace {
                        (
                            PenaltyMatrix::laplacian(&graph, 0.01),
                            CvPlan {
                                folds: design.folds,
                                grid_g: CvPlan::default_grid(design.grid_points),
                                grid_2: vec![0.0],
                                rng_seed: derive_seed(
                                    design.seed,
                                    rep as u64,
                                    PURPOSE_CV ^ (method_tag(method) + 16 * npe_idx as u64),
                                ),
                            },
                        )
                    } else {
                        let grid = CvPlan::default_grid(design.grid_points);
                        (
                            PenaltyMatrix::laplacian(&graph, 0.0),
                            CvPlan {
                                folds: design.folds,
                                grid_g: grid.clone(),
                                grid_2: grid,
                                rng_seed: derive_seed(
                                    design.seed,
                                    rep as u64,
                                    PURPOSE_CV ^ (method_tag(method) + 16 * npe_idx as u64),
                                ),
                            },
                        )
                    };
                    let sel = cross_validate(&data, &penalty, &plan).map_err(|e| e.to_string())?;
                    let (pw, lv) = test_once(penalty, sel.h_g, sel.h_2, false)?;
                    cells.push((method, npe, pw, lv));
                }
            }
        }
    }
    Ok(RepOutcome { cells })
}

fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let b = values.len();
    let mean = values.iter().sum::<f64>() / b as f64;
    if b < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, Some((var / b as f64).sqrt()))
}

/// Runs the full replicate study. Replicates execute in parallel but are
/// aggregated in replicate order, so the report is identical for any worker
/// count.
pub fn run_study(
    design: &SimDesign,
    methods: &[Method],
    config: &TestConfig,
) -> Result<SimReport, SimError> {
    design.validate()?;
    if methods.is_empty() {
        return Err(SimError::InvalidDesign("no methods requested".into()));
    }
    let l_star_graph = hub_satellite_graph(design.hubs, design.satellites_per_hub)?;
    let r2 = design.population_r2()?;

    let outcomes: Vec<Result<RepOutcome, String>> = (0..design.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(design, &l_star_graph, methods, config, rep))
        .collect();

    let total = outcomes.len();
    let failures: Vec<&String> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
    if failures.len() * 10 > total {
        return Err(SimError::TooManyFailures {
            failed: failures.len(),
            total,
            first: failures[0].clone(),
        });
    }
    let kept: Vec<&RepOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();

    let mut rows = Vec::new();
    for &method in methods {
        for &npe in &design.npe_list {
            let mut powers = Vec::with_capacity(kept.len());
            let mut levels = Vec::with_capacity(kept.len());
            for outcome in &kept {
                for &(m, e, pw, lv) in &outcome.cells {
                    if m == method && e == npe {
                        powers.push(pw);
                        levels.push(lv);
                    }
                }
            }
            let (level_mean, level_se) = mean_se(&levels);
            let (power_mean, power_se) = if design.null_model {
                (None, None)
            } else {
                let (m, s) = mean_se(&powers);
                (Some(m), s)
            };
            rows.push(SimRow {
                method,
                npe,
                r2,
                power_mean,
                power_se,
                level_mean,
                level_se,
                replicates: kept.len(),
            });
        }
    }
    Ok(SimReport { rows, failed_replicates: failures.len() })
}
