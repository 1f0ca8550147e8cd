//! Seeded random problems and the comparison experiments built on them.
//!
//! Every experiment connects the origin to seeded random targets (or runs a
//! fixed pair) and produces an [`ExperimentResult`]: one row per
//! `(problem, method)` plus quartile summaries over integer-edged distance
//! bins. Problems are independent and evaluated in parallel, but results are
//! assembled by problem id, so tables are bit-identical for a given seed.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::solve_special;
use crate::error::{GeoError, Result};
use crate::linalg::{random_orthogonal, SymMatrix};
use crate::manifold::{
    fisher_rao_from_velocity, geodesic_from_origin, normalize_default, sym_kl, GaussianPoint,
    GeodesicMethod,
};
use crate::paths::{approx_velocity, path_length, ApproxKind, PathKind, DEFAULT_SEGMENTS};
use crate::shooting::{
    newton_shoot, path_refine, shoot, InitKind, RefinementConfig, ResidualKind, ShootingConfig,
    ShootingReport, ShootingStatus,
};

/// Largest disagreement tolerated between a reference distance and the
/// Fisher norm of its velocity.
pub const REFERENCE_NORM_TOL: f64 = 1e-8;

/// Default minimum number of problems per distance bin.
pub const DEFAULT_MIN_BIN_COUNT: usize = 10;

/// Row status of a successful measurement.
pub const STATUS_OK: &str = "ok";

/// Row status when the reference distance could not be established.
pub const STATUS_REFERENCE_FAILED: &str = "reference_failed";

/// Independent random streams per experiment, so that the batteries do not
/// share problems when run with the same seed.
const STREAM_PATHS: u64 = 1;
const STREAM_RESIDUALS: u64 = 2;

/// Distribution of random targets: uniform means and log-uniform eigenvalues
/// around a random orthonormal basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub dim: usize,
    /// Mean components are drawn from `U[−mu_range, mu_range]`.
    pub mu_range: f64,
    /// Covariance eigenvalues are `exp(U[−log_eig_range, log_eig_range])`.
    pub log_eig_range: f64,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn new(dim: usize, seed: u64) -> Self {
        ProblemSpec {
            dim,
            mu_range: 10.0,
            log_eig_range: 10.0,
            seed,
        }
    }

    pub fn with_ranges(self, mu_range: f64, log_eig_range: f64) -> Self {
        ProblemSpec {
            mu_range,
            log_eig_range,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(GeoError::InvalidInput("dimension must be positive".into()));
        }
        for (name, r) in [
            ("mu_range", self.mu_range),
            ("log_eig_range", self.log_eig_range),
        ] {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(GeoError::InvalidInput(format!(
                    "{name} must be finite and non-negative, got {r}"
                )));
            }
        }
        Ok(())
    }
}

fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, range: f64) -> f64 {
    if range > 0.0 {
        rng.random_range(-range..=range)
    } else {
        0.0
    }
}

/// Draws one target point; deterministic for a given generator state.
pub fn random_point<R: Rng + ?Sized>(spec: &ProblemSpec, rng: &mut R) -> Result<GaussianPoint> {
    spec.validate()?;
    let q = random_orthogonal(spec.dim, rng)?;
    let eig: Vec<f64> = (0..spec.dim)
        .map(|_| symmetric_uniform(rng, spec.log_eig_range).exp())
        .collect();
    let mu = DVector::from_fn(spec.dim, |_, _| symmetric_uniform(rng, spec.mu_range));
    GaussianPoint::new(mu, SymMatrix::from_diagonal(&eig).congruence(&q))
}

/// The seed recorded for problem `index` of a battery.
pub fn problem_seed(spec: &ProblemSpec, index: usize) -> u64 {
    spec.seed.wrapping_add(index as u64)
}

fn problem_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One `(problem, method)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub id: usize,
    pub d: usize,
    pub seed: u64,
    #[serde(rename = "d_F")]
    pub d_f: f64,
    pub method: String,
    pub value: f64,
    pub status: String,
}

impl ResultRow {
    pub fn succeeded(&self) -> bool {
        self.status == STATUS_OK || self.status == ShootingStatus::Converged.name()
    }
}

/// Quartiles of one method's successful values within a distance bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub lo: f64,
    pub hi: f64,
    pub method: String,
    /// Problems falling in the bin.
    pub count: usize,
    /// Rows in the bin that failed and are excluded from the quartiles.
    pub failures: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Final state of one refinement configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub status: String,
    pub distance: f64,
    pub sym_kl: f64,
    pub total_iterations: usize,
    pub sweeps: usize,
}

/// Rows and summaries of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub problems: usize,
    pub rows: Vec<ResultRow>,
    pub bins: Vec<BinSummary>,
    pub runs: Vec<RunSummary>,
}

impl ExperimentResult {
    /// Names of the methods in first-appearance order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for row in &self.rows {
            if !out.contains(&row.method) {
                out.push(row.method.clone());
            }
        }
        out
    }

    /// Successful values of `method`.
    pub fn values(&self, method: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.succeeded())
            .map(|r| r.value)
            .collect()
    }

    /// Median of the successful values of `method`.
    pub fn median(&self, method: &str) -> Option<f64> {
        let mut v = self.values(method);
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(quantile(&v, 0.5))
    }

    /// Fraction of rows that succeeded (1 for an empty table).
    pub fn success_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 1.0;
        }
        self.rows.iter().filter(|r| r.succeeded()).count() as f64 / self.rows.len() as f64
    }

    /// Writes the rows as CSV with columns `id, d, seed, d_F, method, value, status`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)
                .map_err(|e| GeoError::InvalidInput(format!("csv output failed: {e}")))?;
        }
        w.flush()
            .map_err(|e| GeoError::InvalidInput(format!("csv output failed: {e}")))?;
        Ok(())
    }

    /// The summary (everything except the rows) as pretty-printed JSON.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            experiment: &'a str,
            problems: usize,
            rows: usize,
            success_rate: f64,
            bins: &'a [BinSummary],
            runs: &'a [RunSummary],
        }
        let s = Summary {
            experiment: &self.experiment,
            problems: self.problems,
            rows: self.rows.len(),
            success_rate: self.success_rate(),
            bins: &self.bins,
            runs: &self.runs,
        };
        serde_json::to_string_pretty(&s).expect("summary serialization cannot fail")
    }
}

/// Linear-interpolation quantile of sorted, non-empty data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Integer-edged bins over the finite distances, merging any bin with fewer
/// than `min_count` entries into its right neighbour (the last into its left).
pub fn distance_bins(distances: &[f64], min_count: usize) -> Vec<(f64, f64)> {
    let finite: Vec<f64> = distances
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .collect();
    if finite.is_empty() {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let hi = finite
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .floor()
        + 1.0;
    let mut merged: Vec<(f64, f64, usize)> = Vec::new();
    let mut start = lo;
    let mut count = 0;
    let mut edge = lo;
    while edge < hi {
        let next = edge + 1.0;
        count += finite.iter().filter(|&&d| d >= edge && d < next).count();
        if count >= min_count {
            merged.push((start, next, count));
            start = next;
            count = 0;
        }
        edge = next;
    }
    if count > 0 || merged.is_empty() {
        match merged.last_mut() {
            Some(last) => last.1 = hi,
            None => merged.push((start, hi, count)),
        }
    }
    merged.into_iter().map(|(a, b, _)| (a, b)).collect()
}

fn summarize_bins(rows: &[ResultRow], per_problem: &[f64], min_count: usize) -> Vec<BinSummary> {
    let bins = distance_bins(per_problem, min_count);
    let mut methods: Vec<&str> = Vec::new();
    for row in rows {
        if !methods.contains(&row.method.as_str()) {
            methods.push(&row.method);
        }
    }
    let mut out = Vec::new();
    for &(lo, hi) in &bins {
        let inside = |d: f64| d >= lo && d < hi;
        let count = per_problem.iter().filter(|&&d| inside(d)).count();
        for &method in &methods {
            let in_bin: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == method && inside(r.d_f))
                .collect();
            let mut ok: Vec<f64> = in_bin
                .iter()
                .filter(|r| r.succeeded())
                .map(|r| r.value)
                .collect();
            ok.sort_by(f64::total_cmp);
            let (q1, median, q3) = if ok.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (quantile(&ok, 0.25), quantile(&ok, 0.5), quantile(&ok, 0.75))
            };
            out.push(BinSummary {
                lo,
                hi,
                method: method.to_string(),
                count,
                failures: in_bin.len() - ok.len(),
                q1,
                median,
                q3,
            });
        }
    }
    out
}

/// A validated geodesic distance between two points.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistance {
    pub distance: f64,
    pub sym_kl: f64,
    /// Which solver produced it: `closed`, `newton` or `refine`.
    pub solver: &'static str,
    pub iterations: usize,
}

/// Refinement depth for a pair whose moment path has length `moment_length`:
/// roughly unit-length segments, between 3 and 129 points.
pub fn refinement_levels(moment_length: f64) -> u32 {
    if !(moment_length > 1.0) {
        return 1;
    }
    (moment_length.log2().ceil() as u32).clamp(1, 7)
}

/// Iteration budget of the Newton polish in [`reference_distance`].
const NEWTON_ITERS: usize = 50;

/// Shooting budget of the final refinement stage in [`reference_distance`];
/// the Newton polish takes over from there.
const REFINE_FINAL_ITERS: usize = 200;

/// Geodesic distance from `a` to `b` to within `tol` in endpoint divergence.
///
/// Special cases are solved in closed form. Otherwise Newton shooting is
/// started from the projection approximation; if that fails, adaptive path
/// refinement sized to the pair supplies the start instead. Every answer is
/// validated by firing its velocity, and an error is returned if none passes.
pub fn reference_distance(
    a: &GaussianPoint,
    b: &GaussianPoint,
    tol: f64,
) -> Result<ReferenceDistance> {
    if sym_kl(a, b)? == 0.0 {
        return Ok(ReferenceDistance {
            distance: 0.0,
            sym_kl: 0.0,
            solver: "closed",
            iterations: 0,
        });
    }
    let prob = normalize_default(a, b)?;
    if let Ok(sol) = solve_special(&prob.target) {
        let skl = sym_kl(
            &geodesic_from_origin(&sol.velocity, 1.0, GeodesicMethod::MatrixExp)?,
            &prob.target,
        )?;
        if skl <= tol {
            return Ok(ReferenceDistance {
                distance: sol.distance,
                sym_kl: skl,
                solver: "closed",
                iterations: 0,
            });
        }
    }
    if let Ok(v0) = approx_velocity(ApproxKind::Projection, &prob.target) {
        let direct = newton_shoot(
            a,
            b,
            Some(&prob.denormalize_velocity(&v0)),
            tol,
            NEWTON_ITERS,
        )?;
        if let Some(r) = validated(&direct, tol, "newton", direct.iterations) {
            return Ok(r);
        }
    }
    let moment = path_length(PathKind::Moment, a, b, DEFAULT_SEGMENTS)?;
    let sub = ShootingConfig {
        tol,
        max_iters: REFINE_FINAL_ITERS,
        ..ShootingConfig::default()
    };
    let refine_cfg = RefinementConfig {
        levels: refinement_levels(moment),
        tol,
        sub,
        ..RefinementConfig::default()
    };
    let refined = path_refine(a, b, &refine_cfg, true)?;
    if let Some(r) = validated(&refined.result, tol, "refine", refined.total_iterations) {
        return Ok(r);
    }
    let polished = newton_shoot(a, b, Some(&refined.result.velocity), tol, NEWTON_ITERS)?;
    validated(
        &polished,
        tol,
        "refine",
        refined.total_iterations + polished.iterations,
    )
    .ok_or_else(|| {
        GeoError::NumericalOverflow(format!(
            "reference solve did not converge (sym_kl {:e}, status {})",
            polished.sym_kl, polished.status
        ))
    })
}

fn validated(
    rep: &ShootingReport,
    tol: f64,
    solver: &'static str,
    iterations: usize,
) -> Option<ReferenceDistance> {
    let norm_ok =
        (fisher_rao_from_velocity(&rep.velocity_origin) - rep.distance).abs() <= REFERENCE_NORM_TOL;
    (rep.converged() && rep.sym_kl <= tol && norm_ok).then_some(ReferenceDistance {
        distance: rep.distance,
        sym_kl: rep.sym_kl,
        solver,
        iterations,
    })
}

/// Settings of the path-length comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    pub segments: usize,
    pub tol: f64,
    pub min_bin_count: usize,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            segments: DEFAULT_SEGMENTS,
            tol: 1e-10,
            min_bin_count: DEFAULT_MIN_BIN_COUNT,
        }
    }
}

/// Paths whose lengths are compared against the geodesic distance.
pub const COMPARED_PATHS: [PathKind; 4] = [
    PathKind::Annealing,
    PathKind::Moment,
    PathKind::Wasserstein,
    PathKind::Projection,
];

/// Ratio of a path length to the geodesic distance, with `0/0 = 1`.
pub fn length_ratio(length: f64, distance: f64) -> f64 {
    if distance == 0.0 && length == 0.0 {
        1.0
    } else {
        length / distance
    }
}

/// For `n` origin-to-random problems: each compared path's length divided
/// by the geodesic distance.
pub fn run_path_comparison(
    n: usize,
    spec: &ProblemSpec,
    opts: &PathOptions,
) -> Result<ExperimentResult> {
    spec.validate()?;
    let per_problem: Vec<(Vec<ResultRow>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| path_problem(i, spec, opts))
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = per_problem.iter().map(|(_, d)| *d).collect();
    let rows: Vec<ResultRow> = per_problem.into_iter().flat_map(|(r, _)| r).collect();
    let bins = summarize_bins(&rows, &distances, opts.min_bin_count);
    Ok(ExperimentResult {
        experiment: "paths".into(),
        problems: n,
        rows,
        bins,
        runs: Vec::new(),
    })
}

fn path_problem(
    id: usize,
    spec: &ProblemSpec,
    opts: &PathOptions,
) -> Result<(Vec<ResultRow>, f64)> {
    let seed = problem_seed(spec, id);
    let target = random_point(spec, &mut problem_rng(seed, STREAM_PATHS))?;
    let origin = GaussianPoint::origin(spec.dim);
    let reference = reference_distance(&origin, &target, opts.tol);
    let (d_f, status) = match &reference {
        Ok(r) => (r.distance, STATUS_OK),
        Err(_) => (f64::NAN, STATUS_REFERENCE_FAILED),
    };
    let mut rows = Vec::with_capacity(COMPARED_PATHS.len());
    for kind in COMPARED_PATHS {
        let (value, status) = match path_length(kind, &origin, &target, opts.segments) {
            Ok(len) => (length_ratio(len, d_f), status),
            Err(e) => (f64::NAN, error_status(&e)),
        };
        rows.push(ResultRow {
            id,
            d: spec.dim,
            seed,
            d_f,
            method: kind.name().into(),
            value,
            status: status.into(),
        });
    }
    Ok((rows, d_f))
}

fn error_status(e: &GeoError) -> &'static str {
    match e {
        GeoError::NumericalOverflow(_) => "numerical_failure",
        _ => "error",
    }
}

/// Settings of the residual and initialisation comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualOptions {
    pub min_bin_count: usize,
    /// Also run the initialisation arms (projection residuals, each init kind).
    pub init_arms: bool,
    /// Base solver settings; residual and init kinds are set per arm.
    pub shooting: ShootingConfig,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions {
            min_bin_count: DEFAULT_MIN_BIN_COUNT,
            init_arms: true,
            shooting: ShootingConfig::default(),
        }
    }
}

/// Method label of a residual arm (zero initial velocity).
pub fn residual_method(kind: ResidualKind) -> String {
    format!("residual_{}", kind.name())
}

/// Method label of an initialisation arm (projection residuals).
pub fn init_method(kind: InitKind) -> String {
    format!("init_{}", kind.name())
}

/// For `n` origin-to-random problems: shooting iteration counts for every
/// residual kind from a zero start and, optionally, for every initial
/// velocity with projection residuals. Problems are binned by their
/// reference distance; non-converged runs keep their status and are
/// excluded from the bin quartiles.
pub fn run_residual_comparison(
    n: usize,
    spec: &ProblemSpec,
    opts: &ResidualOptions,
) -> Result<ExperimentResult> {
    spec.validate()?;
    let per_problem: Vec<(Vec<ResultRow>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| residual_problem(i, spec, opts))
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = per_problem.iter().map(|(_, d)| *d).collect();
    let rows: Vec<ResultRow> = per_problem.into_iter().flat_map(|(r, _)| r).collect();
    let bins = summarize_bins(&rows, &distances, opts.min_bin_count);
    Ok(ExperimentResult {
        experiment: "residuals".into(),
        problems: n,
        rows,
        bins,
        runs: Vec::new(),
    })
}

fn residual_problem(
    id: usize,
    spec: &ProblemSpec,
    opts: &ResidualOptions,
) -> Result<(Vec<ResultRow>, f64)> {
    let seed = problem_seed(spec, id);
    let target = random_point(spec, &mut problem_rng(seed, STREAM_RESIDUALS))?;
    let origin = GaussianPoint::origin(spec.dim);

    let mut arms: Vec<(String, ShootingConfig)> = ResidualKind::ALL
        .iter()
        .map(|&k| {
            (
                residual_method(k),
                ShootingConfig {
                    residual_kind: k,
                    init_kind: InitKind::Zero,
                    ..opts.shooting
                },
            )
        })
        .collect();
    if opts.init_arms {
        for k in InitKind::ALL {
            let cfg = ShootingConfig {
                residual_kind: ResidualKind::Projection,
                init_kind: k,
                ..opts.shooting
            };
            arms.push((init_method(k), cfg));
        }
    }

    let mut reports: Vec<(String, ShootingReport)> = Vec::with_capacity(arms.len());
    for (method, cfg) in arms {
        // the zero-init projection arm is shared by both comparisons
        let shared =
            cfg.residual_kind == ResidualKind::Projection && cfg.init_kind == InitKind::Zero;
        let reused = shared
            .then(|| {
                reports
                    .iter()
                    .find(|(m, _)| *m == residual_method(ResidualKind::Projection))
            })
            .flatten()
            .map(|(_, r)| r.clone());
        let report = match reused {
            Some(r) => r,
            None => shoot(&origin, &target, None, &cfg)?,
        };
        reports.push((method, report));
    }

    let d_f =
        reference_distance(&origin, &target, opts.shooting.tol).map_or(f64::NAN, |r| r.distance);

    let rows = reports
        .into_iter()
        .map(|(method, r)| ResultRow {
            id,
            d: spec.dim,
            seed,
            d_f,
            method,
            value: r.iterations as f64,
            status: r.status.name().into(),
        })
        .collect();
    Ok((rows, d_f))
}

/// One refinement setup to trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRun {
    pub adaptive: bool,
    pub init_path: PathKind,
    /// The path starts with `2^levels + 1` points.
    pub levels: u32,
    pub max_sweeps: usize,
}

impl RefinementRun {
    pub fn label(&self) -> String {
        let mode = if self.adaptive {
            "adaptive"
        } else {
            "standard"
        };
        format!(
            "{mode}_{}_n{}",
            self.init_path.name(),
            (1usize << self.levels) + 1
        )
    }
}

/// The setups behind the refinement comparison: standard and adaptive
/// refinement from each initial path, all with 129 points.
pub fn default_refinement_runs() -> Vec<RefinementRun> {
    let mut runs = Vec::new();
    for adaptive in [false, true] {
        for init_path in [PathKind::Euclidean, PathKind::Moment, PathKind::Projection] {
            runs.push(RefinementRun {
                adaptive,
                init_path,
                levels: 7,
                max_sweeps: 100,
            });
        }
    }
    runs
}

/// Traces of path refinement between `a` and `b` for each setup.
///
/// Each sweep contributes two rows per setup, `<label>_sym_kl` and
/// `<label>_iterations` (cumulative shooting iterations); `id` is the sweep
/// number and `d_F` the path length at that sweep. Every recorded sweep is
/// a successful measurement; whether a setup reached the tolerance or
/// stalled is reported in its run summary.
pub fn run_refinement_experiment(
    a: &GaussianPoint,
    b: &GaussianPoint,
    runs: &[RefinementRun],
    base: &RefinementConfig,
) -> Result<ExperimentResult> {
    let reports: Vec<_> = runs
        .par_iter()
        .map(|run| {
            let cfg = RefinementConfig {
                levels: run.levels,
                init_path: run.init_path,
                max_sweeps: run.max_sweeps,
                ..*base
            };
            path_refine(a, b, &cfg, run.adaptive)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (run, report) in runs.iter().zip(&reports) {
        let label = run.label();
        let status = report.result.status.name();
        for sweep in &report.sweeps {
            for (suffix, value) in [
                ("sym_kl", sweep.sym_kl),
                ("iterations", sweep.cumulative_iterations as f64),
            ] {
                rows.push(ResultRow {
                    id: sweep.sweep,
                    d: a.dim(),
                    seed: 0,
                    d_f: sweep.total_length,
                    method: format!("{label}_{suffix}"),
                    value,
                    status: STATUS_OK.into(),
                });
            }
        }
        summaries.push(RunSummary {
            method: label,
            status: status.into(),
            distance: report.result.distance,
            sym_kl: report.result.sym_kl,
            total_iterations: report.total_iterations,
            sweeps: report.sweeps.len(),
        });
    }
    Ok(ExperimentResult {
        experiment: "refinement".into(),
        problems: runs.len(),
        rows,
        bins: Vec::new(),
        runs: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ranges_give_the_origin() {
        let spec = ProblemSpec::new(3, 5).with_ranges(0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_point(&spec, &mut rng).unwrap();
        assert!(p.mu().amax() == 0.0);
        assert!((p.sigma().matrix() - nalgebra::DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn same_seed_same_point() {
        let spec = ProblemSpec::new(4, 7);
        let p = random_point(&spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let q = random_point(&spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn negative_range_rejected() {
        let spec = ProblemSpec::new(2, 1).with_ranges(-1.0, 1.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.25), 1.75);
    }

    #[test]
    fn sparse_bins_are_merged() {
        // 12 in [0,1), 3 in [1,2), 11 in [2,3), 2 in [5,6)
        let mut d = vec![0.5; 12];
        d.extend([1.5; 3]);
        d.extend([2.5; 11]);
        d.extend([5.5; 2]);
        d.push(f64::NAN);
        let bins = distance_bins(&d, 10);
        assert_eq!(bins, vec![(0.0, 1.0), (1.0, 6.0)]);
    }

    #[test]
    fn bins_cover_everything_when_few_samples() {
        let bins = distance_bins(&[0.2, 3.7], 10);
        assert_eq!(bins, vec![(0.0, 4.0)]);
        assert!(distance_bins(&[f64::NAN], 10).is_empty());
    }

    #[test]
    fn coincident_endpoints_have_unit_ratio() {
        assert_eq!(length_ratio(0.0, 0.0), 1.0);
        assert_eq!(length_ratio(3.0, 2.0), 1.5);
    }

    #[test]
    fn trivial_paths_battery() {
        let spec = ProblemSpec::new(2, 11).with_ranges(0.0, 0.0);
        let res = run_path_comparison(1, &spec, &PathOptions::default()).unwrap();
        assert_eq!(res.rows.len(), COMPARED_PATHS.len());
        for row in &res.rows {
            assert_eq!(row.value, 1.0);
            assert_eq!(row.d_f, 0.0);
            assert_eq!(row.status, STATUS_OK);
        }
    }

    #[test]
    fn trivial_residual_battery_needs_no_iterations() {
        let spec = ProblemSpec::new(2, 12).with_ranges(0.0, 0.0);
        let res = run_residual_comparison(1, &spec, &ResidualOptions::default()).unwrap();
        assert_eq!(res.rows.len(), 8);
        assert!(res.rows.iter().all(|r| r.value == 0.0 && r.succeeded()));
    }

    #[test]
    fn trivial_refinement_converges_immediately() {
        let p = GaussianPoint::from_slices(&[0.3, -0.1], &[1.2, 0.1, 0.1, 0.8]).unwrap();
        let runs = [
            RefinementRun {
                adaptive: true,
                init_path: PathKind::Moment,
                levels: 2,
                max_sweeps: 10,
            },
            RefinementRun {
                adaptive: false,
                init_path: PathKind::Euclidean,
                levels: 2,
                max_sweeps: 10,
            },
        ];
        let res = run_refinement_experiment(&p, &p, &runs, &RefinementConfig::default()).unwrap();
        for run in &res.runs {
            assert_eq!(run.status, "converged", "{run:?}");
            assert!(run.distance < 1e-12, "{run:?}");
        }
    }

    #[test]
    fn csv_has_stable_header() {
        let spec = ProblemSpec::new(2, 3).with_ranges(0.0, 0.0);
        let res = run_path_comparison(1, &spec, &PathOptions::default()).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,d,seed,d_F,method,value,status\n"));
        assert_eq!(text.lines().count(), 1 + COMPARED_PATHS.len());
    }
}
