//! Batch command-line front-end: single-dataset tests, the replicate power
//! study, the two-covariate power-ratio grids, and edge-list inspection.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use grace_infer::graph::WeightedGraph;
use grace_infer::inference::{
    default_figure1_axis, figure1_grid, BoundVariant, Correction, Method, TestConfig,
};
use grace_infer::pipeline::{run_test, PenaltyChoice, PipelineConfig};
use grace_infer::sim::{run_study, SimDesign};

#[derive(Parser)]
#[command(name = "grace-infer", version, about = "Graph-constrained regression inference")]
struct Cli {
    /// Worker threads (fallback: GRACE_INFER_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test all covariates of one dataset
    Test(TestArgs),
    /// Replicate power / type-I study on the hub-satellite design
    Simulate(SimulateArgs),
    /// Two-covariate power-ratio grids (panels a and b)
    Figure1(Figure1Args),
    /// Parse an edge list and print summary statistics
    GraphInfo(GraphInfoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Grace,
    Gracer,
    Gracei,
    Ridge,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Grace => Method::Grace,
            MethodArg::Gracer => Method::GraceR,
            MethodArg::Gracei => Method::GraceI,
            MethodArg::Ridge => Method::Ridge,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    Laplacian,
    Normalized,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionArg {
    By,
    Holm,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundArg {
    Offdiag,
    Fullrow,
}

#[derive(Args)]
struct TestArgs {
    /// Design matrix CSV (n rows, p numeric columns; optional header)
    #[arg(long)]
    x: PathBuf,
    /// Response CSV (one value per row; optional header)
    #[arg(long)]
    y: PathBuf,
    /// Edge list ("nodes <p>" header, 1-based "u v [w]" lines)
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "grace")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "laplacian")]
    penalty: PenaltyArg,
    /// Diagonal jitter added to the graph penalty
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0.05)]
    xi: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "by")]
    correction: CorrectionArg,
    #[arg(long, value_enum, default_value = "offdiag")]
    bound: BoundArg,
    #[arg(long)]
    scale_invariant: bool,
    /// h_G grid as LO:HI:N (log-spaced)
    #[arg(long)]
    grid_g: Option<String>,
    /// h_2 grid as LO:HI:N (log-spaced)
    #[arg(long)]
    grid_2: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    hubs: usize,
    #[arg(long, default_value_t = 9)]
    satellites: usize,
    #[arg(long, default_value_t = 100)]
    n_samples: usize,
    /// Noise SD (9.5 / 6.3 / 4.8 give R^2 of 0.1 / 0.2 / 0.3 at defaults)
    #[arg(long, default_value_t = 4.8)]
    sigma_eps: f64,
    /// Signed perturbed-edge counts, comma separated
    #[arg(long, default_value = "0", value_delimiter = ',')]
    npe: Vec<i64>,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    /// Methods to run, comma separated
    #[arg(long, value_enum, default_value = "grace,gracer,gracei,ridge", value_delimiter = ',')]
    methods: Vec<MethodArg>,
    /// Zero out beta* (type-I-only study)
    #[arg(long)]
    null_model: bool,
    #[arg(long, default_value_t = 0.05)]
    xi: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "offdiag")]
    bound: BoundArg,
    #[arg(long)]
    scale_invariant: bool,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 20)]
    grid_points: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Figure1Args {
    /// h/n for both Grace and GraceI
    #[arg(long, default_value_t = 10.0)]
    k: f64,
    #[arg(long, default_value_t = 1.0)]
    beta1: f64,
    /// The (log p / n)^(1/2 - xi) factor
    #[arg(long, default_value_t = 0.25)]
    t: f64,
    /// Points per axis over (-0.95, 0.95)
    #[arg(long, default_value_t = 39)]
    grid_n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphInfoArgs {
    #[arg(long)]
    edges: PathBuf,
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("GRACE_INFER_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if t == 0 {
            return fail("thread count must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            return fail(format!("thread pool setup failed: {e}"));
        }
    }
    let result = match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Figure1(args) => cmd_figure1(args),
        Command::GraphInfo(args) => cmd_graph_info(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

/// Parses a numeric CSV; a non-numeric first line is treated as a header.
fn read_matrix(path: &Path) -> Result<DMatrix<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        let mut bad = None;
        for (col, field) in line.split(',').enumerate() {
            match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    bad = Some(col);
                    break;
                }
            }
        }
        if let Some(col) = bad {
            if lineno == 0 && rows.is_empty() {
                continue; // header line
            }
            return Err(format!(
                "{}: line {}, column {}: not a finite number",
                path.display(),
                lineno + 1,
                col + 1
            ));
        }
        if width == 0 {
            width = row.len();
        } else if row.len() != width {
            return Err(format!(
                "{}: line {} has {} fields, expected {width}",
                path.display(),
                lineno + 1,
                row.len()
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn read_vector(path: &Path) -> Result<DVector<f64>, String> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(format!("{}: expected a single column, found {}", path.display(), m.ncols()));
    }
    Ok(m.column(0).into_owned())
}

fn read_graph(path: &Path) -> Result<WeightedGraph, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    WeightedGraph::parse_edge_list(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// LO:HI:N log-spaced grid.
fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("grid '{spec}' must be LO:HI:N"));
    }
    let lo: f64 = parts[0].parse().map_err(|_| format!("bad grid bound '{}'", parts[0]))?;
    let hi: f64 = parts[1].parse().map_err(|_| format!("bad grid bound '{}'", parts[1]))?;
    let n: usize = parts[2].parse().map_err(|_| format!("bad grid count '{}'", parts[2]))?;
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(format!("grid '{spec}' needs 0 < LO <= HI and N >= 1"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect())
}

fn ensure_out_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn resolve_seed(seed: Option<u64>) -> (u64, bool) {
    match seed {
        Some(s) => (s, false),
        None => (rand::random(), true),
    }
}

fn test_config(xi: f64, alpha: f64, bound: BoundArg, scale_invariant: bool) -> TestConfig {
    TestConfig {
        xi,
        bound_variant: match bound {
            BoundArg::Offdiag => BoundVariant::Offdiag,
            BoundArg::Fullrow => BoundVariant::Fullrow,
        },
        scale_invariant,
        alpha,
    }
}

fn cmd_test(args: TestArgs) -> Result<(), String> {
    let x = read_matrix(&args.x)?;
    let y = read_vector(&args.y)?;
    if y.len() != x.nrows() {
        return Err(format!("X has {} rows but y has {} values", x.nrows(), y.len()));
    }
    let graph = args.edges.as_deref().map(read_graph).transpose()?;
    let (seed, generated) = resolve_seed(args.seed);
    let cfg = PipelineConfig {
        method: args.method.into(),
        penalty: match args.penalty {
            PenaltyArg::Laplacian => PenaltyChoice::Laplacian,
            PenaltyArg::Normalized => PenaltyChoice::NormalizedLaplacian,
            PenaltyArg::Identity => PenaltyChoice::Identity,
        },
        jitter: args.jitter,
        test: test_config(args.xi, args.alpha, args.bound, args.scale_invariant),
        correction: match args.correction {
            CorrectionArg::By => Correction::By,
            CorrectionArg::Holm => Correction::Holm,
            CorrectionArg::None => Correction::None,
        },
        grid_g: args.grid_g.as_deref().map(parse_grid).transpose()?,
        grid_2: args.grid_2.as_deref().map(parse_grid).transpose()?,
        folds: args.folds,
        seed,
    };
    let out = run_test(&x, &y, graph.as_ref(), &cfg).map_err(|e| e.to_string())?;
    ensure_out_dir(&args.out)?;
    write_file(&args.out, "report.csv", &out.report.to_csv())?;
    if let Some(cv) = &out.cv {
        write_file(&args.out, "cv_table.csv", &cv.table_csv())?;
    }
    let mut meta = String::new();
    meta.push_str(&format!("method={}\n", out.report.method.as_str()));
    meta.push_str(&format!("correction={}\n", out.report.correction.as_str()));
    meta.push_str(&format!("alpha={}\nxi={}\n", cfg.test.alpha, cfg.test.xi));
    meta.push_str(&format!("scale_invariant={}\n", cfg.test.scale_invariant));
    meta.push_str(&format!("jitter={}\nfolds={}\n", cfg.jitter, cfg.folds));
    meta.push_str(&format!("seed={seed}\nseed_generated={generated}\n"));
    meta.push_str(&format!("sigma_hat={:.17e}\n", out.sigma_hat));
    meta.push_str(&format!("lasso_lambda={:.17e}\n", out.lasso_lambda));
    meta.push_str(&format!("lasso_kkt={:.3e}\n", out.lasso_kkt));
    meta.push_str(&format!("h_G={:.17e}\nh_2={:.17e}\n", out.h_g, out.h_2));
    if let Some(cv) = &out.cv {
        meta.push_str(&format!("cv_warnings={}\n", cv.warnings));
    }
    write_file(&args.out, "run_meta", &meta)?;
    println!(
        "{} covariates tested, {} rejected; outputs in {}",
        out.report.rows.len(),
        out.report.rows.iter().filter(|r| r.rejected).count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), String> {
    let (seed, generated) = resolve_seed(args.seed);
    let design = SimDesign {
        hubs: args.hubs,
        satellites_per_hub: args.satellites,
        n: args.n_samples,
        sigma_eps: args.sigma_eps,
        npe_list: args.npe.clone(),
        replicates: args.replicates,
        seed,
        null_model: args.null_model,
        folds: args.folds,
        grid_points: args.grid_points,
    };
    let methods: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
    let config = test_config(args.xi, args.alpha, args.bound, args.scale_invariant);
    let report = run_study(&design, &methods, &config).map_err(|e| e.to_string())?;
    ensure_out_dir(&args.out)?;
    write_file(&args.out, "simreport.csv", &report.to_csv())?;
    write_file(&args.out, "curves.csv", &report.curves_csv())?;
    let meta = format!(
        "seed={seed}\nseed_generated={generated}\nreplicates={}\nfailed_replicates={}\n\
         sigma_eps={}\nr2={:.6}\nalpha={}\nxi={}\n",
        args.replicates,
        report.failed_replicates,
        args.sigma_eps,
        design.population_r2().map_err(|e| e.to_string())?,
        args.alpha,
        args.xi
    );
    write_file(&args.out, "run_meta", &meta)?;
    println!("{} rows written to {}", report.rows.len(), args.out.display());
    Ok(())
}

fn cmd_figure1(args: Figure1Args) -> Result<(), String> {
    let axis = default_figure1_axis(args.grid_n);
    let grid = figure1_grid(args.k, args.beta1, args.t, &axis, &axis)
        .map_err(|e| e.to_string())?;
    ensure_out_dir(&args.out)?;
    let mut a = String::from("l,rho,ratio,class\n");
    for r in &grid.panel_a {
        a.push_str(&format!("{:.17e},{:.17e},{:.17e},{}\n", r.l, r.rho, r.value, r.class.as_str()));
    }
    let mut b = String::from("l,rho,log_ratio,class\n");
    for r in &grid.panel_b {
        b.push_str(&format!("{:.17e},{:.17e},{:.17e},{}\n", r.l, r.rho, r.value, r.class.as_str()));
    }
    write_file(&args.out, "figure1a.csv", &a)?;
    write_file(&args.out, "figure1b.csv", &b)?;
    println!("{} grid points per panel written to {}", grid.panel_a.len(), args.out.display());
    Ok(())
}

fn cmd_graph_info(args: GraphInfoArgs) -> Result<(), String> {
    let g = read_graph(&args.edges)?;
    let degrees = g.degrees();
    let max_deg = degrees.iter().cloned().fold(0.0, f64::max);
    let isolated = degrees.iter().filter(|&&d| d == 0.0).count();
    println!("nodes={}", g.num_nodes());
    println!("edges={}", g.num_edges());
    println!("max_degree={max_deg}");
    println!("isolated_nodes={isolated}");
    println!(
        "total_weight={}",
        g.edges().iter().map(|&(_, _, w)| w).sum::<f64>()
    );
    Ok(())
}
