//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line. Criteria 1-3 share the two replicate studies.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use grace_infer::grace::{bias_bound, fit, statistic_covariance_diag, GracePenaltySpec};
use grace_infer::graph::{PenaltyMatrix, WeightedGraph};
use grace_infer::inference::{
    adjust_by, adjust_holm, default_figure1_axis, figure1_grid, gamma_bound,
    grace_statistic, grace_vs_gracei_boundary, upsilon, Method, TestConfig,
};
use grace_infer::lasso::{default_lasso_lambda, kkt_violation, lasso};
use grace_infer::sim::{exact_correlation_design, run_study, SimDesign, SimReport};
use grace_infer::standardize;

const STUDY_SEED: u64 = 42;
const STUDY_REPLICATES: usize = 20;

struct Studies {
    /// R^2 = 0.1 (sigma 9.5) and R^2 = 0.3 (sigma 4.8).
    low: SimReport,
    high: SimReport,
}

fn studies() -> &'static Studies {
    static CELL: OnceLock<Studies> = OnceLock::new();
    CELL.get_or_init(|| {
        let methods = [Method::Grace, Method::GraceR, Method::GraceI, Method::Ridge];
        let config = TestConfig::default();
        let run = |sigma: f64| {
            let mut d = SimDesign::defaults(sigma, STUDY_REPLICATES, STUDY_SEED);
            d.npe_list = vec![-165, 0, 350];
            run_study(&d, &methods, &config).expect("study failed")
        };
        Studies { low: run(9.5), high: run(4.8) }
    })
}

fn row(report: &SimReport, method: Method, npe: i64) -> (f64, f64) {
    let r = report
        .rows
        .iter()
        .find(|r| r.method == method && r.npe == npe)
        .expect("missing study row");
    (r.power_mean.unwrap(), r.level_mean)
}

fn verdict(criterion: usize, ok: bool, detail: &str) {
    println!(
        "[PRIMARY {criterion}] {}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_1_level_control() {
    let s = studies();
    let mut worst: (f64, String) = (0.5, String::new());
    let mut ok = true;
    for (name, report) in [("R2=0.1", &s.low), ("R2=0.3", &s.high)] {
        for method in [Method::Grace, Method::GraceR, Method::GraceI] {
            for npe in [-165i64, 0, 350] {
                let (_, level) = row(report, method, npe);
                if !(0.005..=0.065).contains(&level) {
                    ok = false;
                }
                let d = (level - 0.035).abs();
                if d > (worst.0 - 0.035).abs() || worst.1.is_empty() {
                    worst = (level, format!("{} {} npe={npe}", name, method.as_str()));
                }
            }
        }
    }
    verdict(
        1,
        ok,
        &format!("type-I rates within [0.005, 0.065]; extreme {:.4} at {}", worst.0, worst.1),
    );
}

#[test]
fn criterion_2_power_ordering() {
    let s = studies();
    let (grace0, _) = row(&s.high, Method::Grace, 0);
    let (gracei, _) = row(&s.high, Method::GraceI, 0);
    let (ridge, _) = row(&s.high, Method::Ridge, 0);
    let ok = grace0 >= 0.95
        && (0.78..=0.95).contains(&gracei)
        && (0.48..=0.68).contains(&ridge)
        && grace0 - ridge >= 0.25;
    verdict(
        2,
        ok,
        &format!("R2=0.3 powers: grace(0)={grace0:.3}, gracei={gracei:.3}, ridge={ridge:.3}"),
    );
}

#[test]
fn criterion_3_robustness_shape() {
    let s = studies();
    let (gracer350, _) = row(&s.high, Method::GraceR, 350);
    let (grace350, _) = row(&s.high, Method::Grace, 350);
    let (gracei, _) = row(&s.high, Method::GraceI, 0);
    let ok = gracer350 >= grace350 - 0.02 && (gracer350 - gracei).abs() <= 0.12;
    verdict(
        3,
        ok,
        &format!(
            "NPE=350 at R2=0.3: gracer={gracer350:.3}, grace={grace350:.3}, gracei={gracei:.3}"
        ),
    );
}

#[test]
fn criterion_4_closed_form_oracles() {
    let mut rng = ChaCha12Rng::seed_from_u64(4001);
    let config = TestConfig::default();
    let mut max_rel = 0.0_f64;
    for inst in 0..100 {
        let n = rng.gen_range(20..80);
        let nf = n as f64;
        let rho = rng.gen_range(-0.9..0.9);
        let l = rng.gen_range(-0.95..0.95);
        let h = rng.gen_range(1.0..1000.0);
        let sigma = rng.gen_range(0.5..3.0);
        let x = exact_correlation_design(n, rho, 5000 + inst);
        let y_raw = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let ym = y_raw.mean();
        let y = y_raw.map(|v| v - ym);
        let data = grace_infer::RegressionData::from_parts(x.clone(), y.clone(), true).unwrap();
        let lm =
            PenaltyMatrix::custom(DMatrix::from_row_slice(2, 2, &[1.0, l, l, 1.0])).unwrap();
        let spec = GracePenaltySpec::new(lm, h, 0.0).unwrap();
        let f = fit(&data, &spec, sigma).unwrap();
        let beta_tilde = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));

        let det = (nf + h).powi(2) - (nf * rho + h * l).powi(2);
        let x1y = x.column(0).dot(&y);
        let x2y = x.column(1).dot(&y);
        // two-covariate closed forms for covariate 1
        let z1_expected = ((nf + h) * x1y - (nf * rho + h * l) * x2y
            + h * beta_tilde[0] * (nf + h - nf * rho * l - h * l * l)
            + nf * h * beta_tilde[1] * (l - rho))
            / det;
        let t = (2.0_f64.ln() / nf).powf(0.5 - config.xi);
        let gamma1_expected = (nf * h * (l - rho)).abs() / det * t;
        let var1_expected = sigma * sigma
            * ((nf.powi(3) + 2.0 * h * nf * nf) * (1.0 - rho * rho)
                + nf * h * h * (1.0 + l * l - 2.0 * l * rho))
            / (det * det);

        let z = grace_statistic(&f, &beta_tilde).unwrap();
        let gamma = gamma_bound(&f, &config, n, 2);
        let var = statistic_covariance_diag(&f, &data);
        for (got, want) in [
            (z[0], z1_expected),
            (gamma[0], gamma1_expected),
            (var[0], var1_expected),
        ] {
            let rel = (got - want).abs() / want.abs().max(1e-300);
            max_rel = max_rel.max(rel);
        }
    }
    verdict(4, max_rel < 1e-8, &format!("100 p=2 instances, max relative error {max_rel:.2e}"));
}

#[test]
fn criterion_5_asymptotic_ratio_and_contour() {
    // large-k ratio limit on a 9x9 grid
    let k = 1e6;
    let grid: Vec<f64> = (0..9).map(|i| -0.8 + 0.2 * i as f64).collect();
    let mut max_err = 0.0_f64;
    for &l in &grid {
        for &rho in &grid {
            let ratio =
                upsilon(k, l, rho, 1.0, 0.25).unwrap() / upsilon(k, 0.0, rho, 1.0, 0.25).unwrap();
            let limit = (1.0 - l * l) / (1.0 + l * l - 2.0 * l * rho).sqrt();
            max_err = max_err.max((ratio - limit).abs());
        }
    }
    let ratio_ok = max_err < 1e-3;

    // panel (a) sign-change contour at k=10 vs the cubic boundary root
    let axis = default_figure1_axis(39);
    let spacing = axis[1] - axis[0];
    let panel = figure1_grid(10.0, 1.0, 0.25, &axis, &axis).unwrap().panel_a;
    let mut contour_ok = true;
    let mut worst_gap = 0.0_f64;
    for rho in [-0.6, -0.3, 0.3, 0.6] {
        let l_star = grace_vs_gracei_boundary(rho);
        let line: Vec<&grace_infer::inference::Figure1Record> = panel
            .iter()
            .filter(|r| (r.rho - rho).abs() < 1e-9)
            .collect();
        // The sign change only localizes the crossing to a grid cell, so the
        // gap is measured from l* to the bracketing interval. (At k=10 the
        // exact crossing sits ~0.05 from the asymptotic cubic root at
        // rho=+/-0.6, so a cell-midpoint metric would conflate that finite-k
        // shift with discretization error.)
        let mut gap = f64::INFINITY;
        for w in line.windows(2) {
            if (w[0].value - 1.0) * (w[1].value - 1.0) < 0.0 {
                let (lo, hi) = (w[0].l.min(w[1].l), w[0].l.max(w[1].l));
                let dist = if l_star < lo {
                    lo - l_star
                } else if l_star > hi {
                    l_star - hi
                } else {
                    0.0
                };
                gap = gap.min(dist);
            }
        }
        worst_gap = worst_gap.max(gap);
        if gap > spacing {
            contour_ok = false;
        }
    }
    verdict(
        5,
        ratio_ok && contour_ok,
        &format!(
            "k=1e6 ratio error {max_err:.2e}; contour-to-root gap {worst_gap:.4} (grid {spacing:.3})"
        ),
    );
}

#[test]
fn criterion_6_deterministic_bias_bound() {
    let mut rng = ChaCha12Rng::seed_from_u64(6001);
    let draws = 200;
    let mut ok = true;
    let mut detail = String::new();
    for inst in 0..20 {
        let p = rng.gen_range(3..=20usize);
        let n = p + rng.gen_range(5..25usize);
        let x_raw = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-2.0..2.0));
        let zero_lbeta = inst % 4 == 0;
        let graph =
            WeightedGraph::new(p, (0..p - 1).map(|i| (i, i + 1, 1.0)).collect()).unwrap();
        let penalty = PenaltyMatrix::laplacian(&graph, 0.0);
        let (h_g, h_2) = if zero_lbeta {
            (rng.gen_range(1.0..50.0), 0.0)
        } else {
            (rng.gen_range(1.0..50.0), rng.gen_range(0.0..5.0))
        };
        let beta_star = if zero_lbeta {
            // constant vector lies in the chain-Laplacian null space
            DVector::from_element(p, rng.gen_range(0.5..2.0))
        } else {
            DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0))
        };
        let sigma = 0.5;

        // standardize X once; beta* is taken in the standardized scale
        let y0 = DVector::zeros(n);
        let (data0, _) = standardize(&x_raw, &y0).unwrap();
        let x = data0.x().clone();
        let spec = GracePenaltySpec::new(penalty, h_g, h_2).unwrap();
        let signal = &x * &beta_star;
        let mut mean = DVector::zeros(p);
        for d in 0..draws {
            let mut noise_rng = ChaCha12Rng::seed_from_u64(7000 + 97 * inst as u64 + d as u64);
            let eps = DVector::from_fn(n, |_, _| {
                sigma * noise_rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let y = &signal + eps;
            let data = grace_infer::RegressionData::from_parts(x.clone(), y, true).unwrap();
            let f = fit(&data, &spec, sigma).unwrap();
            mean += &f.beta_hat;
        }
        mean /= draws as f64;
        let data = grace_infer::RegressionData::from_parts(x.clone(), signal.clone(), true)
            .unwrap();
        let f = fit(&data, &spec, sigma).unwrap();
        let bound = bias_bound(&f, &beta_star);
        // MC sd of the mean estimate: sigma^2/draws * tr(A^{-1} G A^{-1})
        let g = data.gram();
        let trace = (f.a_inverse() * g * f.a_inverse()).trace();
        let mc_se = sigma * (trace / draws as f64).sqrt();
        let bias = (&mean - &beta_star).norm();
        if bias > bound + 3.0 * mc_se {
            ok = false;
            detail = format!("instance {inst}: bias {bias:.4} > bound {bound:.4} + 3se {mc_se:.4}");
        }
        if zero_lbeta {
            assert!(bound < 1e-10, "L beta* = 0 must give a zero bound, got {bound}");
            if bias > 3.0 * mc_se {
                ok = false;
                detail = format!("instance {inst}: null-space bias {bias:.4} > 3se {mc_se:.4}");
            }
        }
    }
    if detail.is_empty() {
        detail = "20 instances, 200 draws each, within deterministic bias bound + 3 MC SE".into();
    }
    verdict(6, ok, &detail);
}

#[test]
fn criterion_7_solver_certificates() {
    let mut rng = ChaCha12Rng::seed_from_u64(7001);
    let mut worst_kkt = 0.0_f64;
    let mut worst_res = 0.0_f64;
    for _ in 0..50 {
        let p = rng.gen_range(3..30usize);
        let n = rng.gen_range(10..60usize);
        let x_raw = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-2.0..2.0));
        let y_raw = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let (data, _) = standardize(&x_raw, &y_raw).unwrap();
        let lambda = default_lasso_lambda(rng.gen_range(0.2..2.0), n, p);
        let lfit = lasso(&data, lambda).unwrap();
        worst_kkt = worst_kkt.max(kkt_violation(&data, &lfit.beta, lambda));

        let spec =
            GracePenaltySpec::new(PenaltyMatrix::identity(p), 0.0, rng.gen_range(0.1..100.0))
                .unwrap();
        let f = fit(&data, &spec, 1.0).unwrap();
        let a = data.gram() + f.effective_penalty();
        let res = (a * &f.beta_hat - data.xty()).norm() / data.xty().norm();
        worst_res = worst_res.max(res);
    }
    let ok = worst_kkt <= 1e-6 && worst_res <= 1e-6;
    verdict(
        7,
        ok,
        &format!("50 fits: worst KKT violation {worst_kkt:.2e}, worst residual {worst_res:.2e}"),
    );
}

#[test]
fn criterion_8_multiple_testing_oracles() {
    let by = adjust_by(&[0.01, 0.02, 0.03]).unwrap();
    let hand_by = by.iter().all(|&v| (v - 0.055).abs() < 1e-12);
    let holm1 = adjust_holm(&[0.01, 0.04]).unwrap();
    let holm2 = adjust_holm(&[0.03, 0.03, 0.03]).unwrap();
    let hand_holm = (holm1[0] - 0.02).abs() < 1e-12
        && (holm1[1] - 0.04).abs() < 1e-12
        && holm2.iter().all(|&v| (v - 0.09).abs() < 1e-12);
    let single = adjust_by(&[0.37]).unwrap()[0] == 0.37 && adjust_holm(&[0.37]).unwrap()[0] == 0.37;

    let mut rng = ChaCha12Rng::seed_from_u64(8001);
    let mut props = true;
    for _ in 0..1000 {
        let m = rng.gen_range(1..40usize);
        let p: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        type Adjust = fn(&[f64]) -> Result<Vec<f64>, grace_infer::inference::InferenceError>;
        for adjust in [adjust_by as Adjust, adjust_holm as Adjust] {
            let adj = adjust(&p).unwrap();
            // monotone in the raw values and never below them
            if adj.iter().zip(&p).any(|(a, r)| a < r || *a > 1.0) {
                props = false;
            }
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap());
            for w in order.windows(2) {
                if adj[w[0]] > adj[w[1]] + 1e-15 {
                    props = false;
                }
            }
            // permutation equivariance
            let mut perm: Vec<usize> = (0..m).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let p_perm: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            let adj_perm = adjust(&p_perm).unwrap();
            for (pos, &i) in perm.iter().enumerate() {
                if (adj_perm[pos] - adj[i]).abs() > 1e-15 {
                    props = false;
                }
            }
        }
    }
    let ok = hand_by && hand_holm && single && props;
    verdict(8, ok, "hand-computed BY/Holm values and 1000 random property checks");
}

#[test]
fn criterion_9_thread_count_determinism() {
    let mut d = SimDesign::defaults(4.8, 4, 99);
    d.hubs = 6;
    d.satellites_per_hub = 4;
    d.n = 40;
    d.npe_list = vec![0, 3];
    d.folds = 5;
    d.grid_points = 6;
    let methods = [Method::Grace, Method::GraceR, Method::GraceI, Method::Ridge];
    let config = TestConfig::default();
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_study(&d, &methods, &config).unwrap().to_csv())
    };
    let single = run_with(1);
    let multi = run_with(2);
    verdict(
        9,
        single == multi,
        &format!("{}-byte SimReport identical across 1 and 2 worker threads", single.len()),
    );
}
