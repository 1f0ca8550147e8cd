//! `mvngeo`: Fisher–Rao distances, path samples and comparison experiments
//! for multivariate normals.
//!
//! Exit codes: 0 on success, 1 on invalid input or usage, 2 when a solver
//! does not converge (or, for `bench`, when fewer than 95% of rows succeed).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mvngeo::bench::{
    default_refinement_runs, run_path_comparison, run_refinement_experiment,
    run_residual_comparison, ExperimentResult, PathOptions, ProblemSpec, ResidualOptions,
};
use mvngeo::closed_form::{classify, solve_classified, DEFAULT_ANGLE_TOL};
use mvngeo::manifold::normalize_default;
use mvngeo::paths::{PathEvaluator, PathKind, DEFAULT_SEGMENTS};
use mvngeo::shooting::{
    geodesic_from, newton_shoot, path_refine, shoot, RefinementConfig, ShootingConfig,
    ShootingReport,
};
use mvngeo::{GaussianPoint, TangentVector};

/// Fraction of bench rows that must succeed for a zero exit code.
const BENCH_SUCCESS_RATE: f64 = 0.95;

/// Default problem count of the random batteries; `--full` runs the full-size battery.
const DESK_PROBLEMS: usize = 500;
const FULL_PROBLEMS: usize = 5000;

/// Endpoint divergence and iteration budget of the Newton polish applied to
/// geodesics before sampling.
const SAMPLE_POLISH_TOL: f64 = 1e-24;
const SAMPLE_POLISH_ITERS: usize = 20;

#[derive(Parser, Debug)]
#[command(
    name = "mvngeo",
    version,
    about = "Fisher–Rao geometry of multivariate normals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fisher–Rao distance between two normals.
    Distance(DistanceArgs),
    /// Points along an interpolating path or the geodesic.
    Sample(SampleArgs),
    /// Run one of the comparison experiments and write CSV + JSON summary.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct Endpoints {
    /// Start point: a JSON file or inline JSON `{"mu": [...], "sigma": [[...], ...]}`.
    #[arg(long)]
    a: String,
    /// End point, as for `--a`.
    #[arg(long)]
    b: String,
}

#[derive(Args, Debug, Clone, Copy)]
struct SolverArgs {
    /// Endpoint symmetrized-KL tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Cap on the residual norm used to scale shooting updates.
    #[arg(long = "r-norm-max", default_value_t = 1.0)]
    r_norm_max: f64,
}

impl SolverArgs {
    fn shooting(&self) -> ShootingConfig {
        ShootingConfig {
            tol: self.tol,
            r_norm_max: self.r_norm_max,
            ..ShootingConfig::default()
        }
    }

    fn refinement(&self) -> RefinementConfig {
        RefinementConfig {
            tol: self.tol,
            sub: self.shooting(),
            ..RefinementConfig::default()
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    /// Closed form when the pair is a special case, else adaptive refinement.
    Auto,
    /// Closed form only; fails on general pairs.
    Closed,
    /// Direct shooting.
    Shoot,
    /// Adaptive path refinement.
    Refine,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct DistanceArgs {
    #[command(flatten)]
    endpoints: Endpoints,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    method: Method,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    endpoints: Endpoints,
    /// annealing, moment, wasserstein, projection, euclidean or geodesic.
    #[arg(long, default_value = "geodesic")]
    kind: String,
    /// Number of equally spaced parameter values, endpoints included.
    #[arg(long, default_value_t = 11)]
    n: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Experiment {
    /// Path lengths relative to the geodesic distance.
    Paths,
    /// Shooting iterations per residual and initialisation.
    Residuals,
    /// Refinement traces on a fixed pair.
    Refinement,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// Number of random problems (default 500).
    #[arg(long)]
    problems: Option<usize>,
    /// Run the full-size battery of 5000 problems.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, env = "MVNGEO_SEED", default_value_t = 2024)]
    seed: u64,
    /// Mean components are drawn from U[-r, r] (default 10 for paths, 5 for residuals).
    #[arg(long = "mu-range")]
    mu_range: Option<f64>,
    /// Log-eigenvalues are drawn from U[-r, r] (default 10 for paths, 5 for residuals).
    #[arg(long = "log-eig-range")]
    log_eig_range: Option<f64>,
    /// Quadrature segments for path lengths.
    #[arg(long, default_value_t = DEFAULT_SEGMENTS)]
    segments: usize,
    /// Skip the initialisation arms of the residual experiment.
    #[arg(long = "no-init-arms")]
    no_init_arms: bool,
    /// Refinement pair (defaults to the two distant bivariate normals of the refinement study).
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for `<experiment>.csv` and `<experiment>_summary.json`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Failure classes, mapped to exit codes.
#[derive(Debug)]
enum CliError {
    Input(String),
    Solver(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Solver(_) => 2,
        }
    }
}

impl From<mvngeo::GeoError> for CliError {
    fn from(e: mvngeo::GeoError) -> Self {
        CliError::Solver(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version requests are not errors; bad usage is an input error
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Distance(args) => cmd_distance(&args),
        Command::Sample(args) => cmd_sample(&args),
        Command::Bench(args) => cmd_bench(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let (CliError::Input(msg) | CliError::Solver(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Reads a point from inline JSON or from a file holding JSON.
fn read_point(label: &str, source: &str) -> CliResult<GaussianPoint> {
    let text = if source.trim_start().starts_with('{') {
        source.to_string()
    } else {
        fs::read_to_string(source)
            .map_err(|e| CliError::Input(format!("{label}: cannot read {source}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{label}: {e}")))
}

fn read_endpoints(e: &Endpoints) -> CliResult<(GaussianPoint, GaussianPoint)> {
    let a = read_point("a", &e.a)?;
    let b = read_point("b", &e.b)?;
    if a.dim() != b.dim() {
        return Err(CliError::Input(format!(
            "a has dimension {} but b has dimension {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok((a, b))
}

fn validate_solver(s: &SolverArgs) -> CliResult<()> {
    if !(s.tol > 0.0) || !(s.r_norm_max > 0.0) {
        return Err(CliError::Input(
            "--tol and --r-norm-max must be positive".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct DistanceReport {
    distance: f64,
    method: &'static str,
    status: String,
    iterations: usize,
    sym_kl: f64,
    velocity: TangentVector,
}

impl DistanceReport {
    fn converged(&self) -> bool {
        self.status == "converged"
    }

    fn from_shooting(method: &'static str, r: ShootingReport) -> Self {
        DistanceReport {
            distance: r.distance,
            method,
            status: r.status.name().into(),
            iterations: r.iterations,
            sym_kl: r.sym_kl,
            velocity: r.velocity,
        }
    }
}

/// Solves the boundary-value problem with the requested method.
fn solve(
    a: &GaussianPoint,
    b: &GaussianPoint,
    method: Method,
    solver: &SolverArgs,
) -> CliResult<DistanceReport> {
    if a == b {
        return Ok(DistanceReport {
            distance: 0.0,
            method: "closed",
            status: "converged".into(),
            iterations: 0,
            sym_kl: 0.0,
            velocity: TangentVector::zeros(a.dim()),
        });
    }
    let prob = normalize_default(a, b)?;
    let class = classify(&prob.target, DEFAULT_ANGLE_TOL);
    match method {
        Method::Auto | Method::Closed if class.kind.is_special() => {
            let sol = solve_classified(&prob.target, &class)?;
            let end = mvngeo::geodesic_from_origin(
                &sol.velocity,
                1.0,
                mvngeo::GeodesicMethod::MatrixExp,
            )?;
            Ok(DistanceReport {
                distance: sol.distance,
                method: "closed",
                status: "converged".into(),
                iterations: 0,
                sym_kl: mvngeo::sym_kl(&end, &prob.target)?,
                velocity: prob.denormalize_velocity(&sol.velocity),
            })
        }
        Method::Closed => Err(CliError::Input(
            "the pair is not a special case (no closed form); use --method auto, shoot or refine"
                .into(),
        )),
        Method::Shoot => Ok(DistanceReport::from_shooting(
            "shoot",
            shoot(a, b, None, &solver.shooting())?,
        )),
        Method::Auto | Method::Refine => {
            let rep = path_refine(a, b, &solver.refinement(), true)?;
            let mut out = DistanceReport::from_shooting("refine", rep.result);
            out.iterations = rep.total_iterations;
            Ok(out)
        }
    }
}

fn cmd_distance(args: &DistanceArgs) -> CliResult<ExitCode> {
    validate_solver(&args.solver)?;
    let (a, b) = read_endpoints(&args.endpoints)?;
    let report = solve(&a, &b, args.method, &args.solver)?;
    let mut stdout = io::stdout().lock();
    let written = match args.format {
        Format::Json => writeln!(
            stdout,
            "{}",
            serde_json::to_string(&report).expect("report serializes")
        ),
        Format::Csv => writeln!(
            stdout,
            "distance,method,status,iterations,sym_kl\n{},{},{},{},{:e}",
            report.distance, report.method, report.status, report.iterations, report.sym_kl
        ),
    };
    written.map_err(|e| CliError::Input(format!("cannot write output: {e}")))?;
    Ok(if report.converged() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn parameter(i: usize, n: usize) -> f64 {
    if i + 1 == n {
        1.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

fn sample_points(
    a: &GaussianPoint,
    b: &GaussianPoint,
    args: &SampleArgs,
) -> CliResult<Vec<(f64, GaussianPoint)>> {
    if args.n < 2 {
        return Err(CliError::Input(format!(
            "--n must be at least 2, got {}",
            args.n
        )));
    }
    let n = args.n;
    if args.kind == "geodesic" {
        let report = solve(a, b, Method::Auto, &args.solver)?;
        if !report.converged() {
            return Err(CliError::Solver(format!(
                "geodesic solve did not converge (status {}, sym_kl {:e})",
                report.status, report.sym_kl
            )));
        }
        // the endpoints are emitted exactly, so tighten the velocity well
        // beyond the solve tolerance to keep the last step in line
        let mut velocity = report.velocity;
        if let Ok(polished) = newton_shoot(
            a,
            b,
            Some(&velocity),
            SAMPLE_POLISH_TOL,
            SAMPLE_POLISH_ITERS,
        ) {
            if polished.sym_kl < report.sym_kl {
                velocity = polished.velocity;
            }
        }
        return (0..n)
            .map(|i| {
                let t = parameter(i, n);
                let p = match i {
                    0 => a.clone(),
                    _ if i + 1 == n => b.clone(),
                    _ => geodesic_from(a, &velocity, t)?,
                };
                Ok((t, p))
            })
            .collect();
    }
    let kind: PathKind = args
        .kind
        .parse()
        .map_err(|e: mvngeo::GeoError| CliError::Input(format!("--kind: {e}")))?;
    let eval = PathEvaluator::new(kind, a, b)?;
    (0..n)
        .map(|i| {
            let t = parameter(i, n);
            Ok((t, eval.point(t)?))
        })
        .collect()
}

fn cmd_sample(args: &SampleArgs) -> CliResult<ExitCode> {
    validate_solver(&args.solver)?;
    let (a, b) = read_endpoints(&args.endpoints)?;
    // everything is computed before anything is printed
    let points = sample_points(&a, &b, args)?;
    let mut out = String::new();
    match args.format {
        Format::Json => {
            for (_, p) in &points {
                out.push_str(&serde_json::to_string(p).expect("points serialize"));
                out.push('\n');
            }
        }
        Format::Csv => {
            let d = a.dim();
            let mut header = vec!["t".to_string()];
            header.extend((0..d).map(|i| format!("mu{i}")));
            header.extend((0..d).flat_map(|i| (0..d).map(move |j| format!("sigma{i}{j}"))));
            out.push_str(&header.join(","));
            out.push('\n');
            for (t, p) in &points {
                let mut fields = vec![t.to_string()];
                fields.extend(p.mu().iter().map(|x| x.to_string()));
                let s = p.sigma().matrix();
                fields.extend((0..d).flat_map(|i| (0..d).map(move |j| s[(i, j)].to_string())));
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
    }
    io::stdout()
        .lock()
        .write_all(out.as_bytes())
        .map_err(|e| CliError::Input(format!("cannot write output: {e}")))?;
    Ok(ExitCode::SUCCESS)
}

/// The pair of distant bivariate normals used by the refinement study.
fn refinement_pair() -> (GaussianPoint, GaussianPoint) {
    let a = GaussianPoint::from_slices(&[1.0, 2.0], &[1.0, 0.1, 0.1, 10.0]).expect("valid point");
    let b =
        GaussianPoint::from_slices(&[70.0, 35.0], &[10.0, -0.8, -0.8, 1.0]).expect("valid point");
    (a, b)
}

fn run_experiment(args: &BenchArgs) -> CliResult<ExperimentResult> {
    let problems = if args.full {
        FULL_PROBLEMS
    } else {
        args.problems.unwrap_or(DESK_PROBLEMS)
    };
    let (default_mu, default_eig) = match args.experiment {
        Experiment::Residuals => (5.0, 5.0),
        _ => (10.0, 10.0),
    };
    let spec = ProblemSpec::new(args.dim, args.seed).with_ranges(
        args.mu_range.unwrap_or(default_mu),
        args.log_eig_range.unwrap_or(default_eig),
    );
    spec.validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let result = match args.experiment {
        Experiment::Paths => {
            let opts = PathOptions {
                segments: args.segments,
                tol: args.solver.tol,
                ..PathOptions::default()
            };
            run_path_comparison(problems, &spec, &opts)?
        }
        Experiment::Residuals => {
            let opts = ResidualOptions {
                init_arms: !args.no_init_arms,
                shooting: args.solver.shooting(),
                ..Default::default()
            };
            run_residual_comparison(problems, &spec, &opts)?
        }
        Experiment::Refinement => {
            let (a, b) = match (&args.a, &args.b) {
                (Some(a), Some(b)) => read_endpoints(&Endpoints {
                    a: a.clone(),
                    b: b.clone(),
                })?,
                (None, None) => refinement_pair(),
                _ => return Err(CliError::Input("give both --a and --b, or neither".into())),
            };
            run_refinement_experiment(
                &a,
                &b,
                &default_refinement_runs(),
                &args.solver.refinement(),
            )?
        }
    };
    Ok(result)
}

/// Writes `contents` to `path` through a temporary file in the same directory.
fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let io_err = |e: io::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(contents).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn print_summary(result: &ExperimentResult) {
    println!(
        "experiment {}: {} problems, {} rows, {:.1}% succeeded",
        result.experiment,
        result.problems,
        result.rows.len(),
        100.0 * result.success_rate()
    );
    if !result.bins.is_empty() {
        println!(
            "{:>12}  {:<22} {:>6} {:>6} {:>10} {:>10} {:>10}",
            "d_F bin", "method", "n", "fail", "q1", "median", "q3"
        );
        for b in &result.bins {
            let bin = format!("[{}, {})", b.lo, b.hi);
            println!(
                "{:>12}  {:<22} {:>6} {:>6} {:>10.4} {:>10.4} {:>10.4}",
                bin, b.method, b.count, b.failures, b.q1, b.median, b.q3
            );
        }
    }
    if !result.runs.is_empty() {
        println!(
            "{:<28} {:<18} {:>12} {:>12} {:>10} {:>7}",
            "run", "status", "distance", "sym_kl", "iters", "sweeps"
        );
        for r in &result.runs {
            println!(
                "{:<28} {:<18} {:>12.6} {:>12.3e} {:>10} {:>7}",
                r.method, r.status, r.distance, r.sym_kl, r.total_iterations, r.sweeps
            );
        }
    }
}

fn cmd_bench(args: &BenchArgs) -> CliResult<ExitCode> {
    validate_solver(&args.solver)?;
    if !args.out.is_dir() {
        return Err(CliError::Input(format!(
            "--out {} is not a directory",
            args.out.display()
        )));
    }
    let result = run_experiment(args)?;
    let name = &result.experiment;
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    write_atomic(&args.out.join(format!("{name}.csv")), &csv)?;
    write_atomic(
        &args.out.join(format!("{name}_summary.json")),
        result.summary_json().as_bytes(),
    )?;
    print_summary(&result);
    Ok(if result.success_rate() >= BENCH_SUCCESS_RATE {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
