//! Numerical geodesics between arbitrary normals.
//!
//! [`shoot`] repeatedly fires a geodesic from the origin, forms a residual
//! vector from its endpoint to the target, transports that residual back to
//! the origin along the geodesic, and scales it with a finite-difference
//! Jacobi field. [`path_refine`] breaks long problems into chains of short
//! ones and settles the chain onto the geodesic, optionally culling points
//! whenever progress stalls.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GeoError, Result};
use crate::linalg::{expm, sym_fn, SymFn, SymMatrix};
use crate::manifold::{
    augmented_generator, canonical_from_augmented, geodesic_from_origin, inner_with_precision,
    normalize_default, sym_kl, GaussianPoint, GeodesicMethod, OriginProblem, TangentVector,
};
use crate::paths::{approx_velocity, ApproxKind, PathEvaluator, PathKind};

/// Floor on the finite-difference step of the Jacobi field estimate.
pub const MIN_FD_STEP: f64 = 1e-9;

/// Consecutive iterations without progress after which shooting is declared
/// divergent: the divergence either grew or failed to improve on the best
/// iterate by the relative margin [`MIN_PROGRESS`].
pub const DIVERGENCE_WINDOW: usize = 25;

/// Relative decrease of the best divergence that counts as progress.
pub const MIN_PROGRESS: f64 = 1e-6;

/// Geodesic states are re-anchored with a fresh exponential this often.
const REANCHOR_EVERY: usize = 32;

/// Maximum step halvings while searching for an update that reduces the divergence.
const MAX_HALVINGS: usize = 40;

/// How the vector joining a geodesic endpoint to the target is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Euclid,
    Taylor,
    Eigen,
    Projection,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 4] = [
        ResidualKind::Euclid,
        ResidualKind::Taylor,
        ResidualKind::Eigen,
        ResidualKind::Projection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::Euclid => "euclid",
            ResidualKind::Taylor => "taylor",
            ResidualKind::Eigen => "eigen",
            ResidualKind::Projection => "projection",
        }
    }

    fn approx(self) -> Option<ApproxKind> {
        match self {
            ResidualKind::Euclid => None,
            ResidualKind::Taylor => Some(ApproxKind::Taylor),
            ResidualKind::Eigen => Some(ApproxKind::Eigen),
            ResidualKind::Projection => Some(ApproxKind::Projection),
        }
    }
}

impl fmt::Display for ResidualKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResidualKind {
    type Err = GeoError;
    fn from_str(s: &str) -> Result<Self> {
        ResidualKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| GeoError::InvalidInput(format!("unknown residual kind '{s}'")))
    }
}

/// Initial velocity used when no warm start is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Zero,
    Taylor,
    Eigen,
    Projection,
}

impl InitKind {
    pub const ALL: [InitKind; 4] = [
        InitKind::Zero,
        InitKind::Taylor,
        InitKind::Eigen,
        InitKind::Projection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitKind::Zero => "zero",
            InitKind::Taylor => "taylor",
            InitKind::Eigen => "eigen",
            InitKind::Projection => "projection",
        }
    }

    fn approx(self) -> Option<ApproxKind> {
        match self {
            InitKind::Zero => None,
            InitKind::Taylor => Some(ApproxKind::Taylor),
            InitKind::Eigen => Some(ApproxKind::Eigen),
            InitKind::Projection => Some(ApproxKind::Projection),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings of the shooting solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingConfig {
    /// Terminate once the symmetrized KL divergence to the target is at most this.
    pub tol: f64,
    /// Updates are shrunk when the residual norm exceeds this.
    pub r_norm_max: f64,
    pub max_iters: usize,
    pub residual_kind: ResidualKind,
    pub init_kind: InitKind,
    /// Runge–Kutta steps per unit of geodesic length during transport.
    pub steps_per_length: usize,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig {
            tol: 1e-10,
            r_norm_max: 1.0,
            max_iters: 1000,
            residual_kind: ResidualKind::Projection,
            init_kind: InitKind::Projection,
            steps_per_length: 250,
        }
    }
}

impl ShootingConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.r_norm_max > 0.0) || self.steps_per_length == 0 {
            return Err(GeoError::InvalidInput(
                "tol, r_norm_max and steps_per_length must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Termination state of a solver run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShootingStatus {
    Converged,
    MaxIters,
    Diverged,
    NumericalFailure,
}

impl ShootingStatus {
    pub fn name(self) -> &'static str {
        match self {
            ShootingStatus::Converged => "converged",
            ShootingStatus::MaxIters => "max_iters",
            ShootingStatus::Diverged => "diverged",
            ShootingStatus::NumericalFailure => "numerical_failure",
        }
    }
}

impl fmt::Display for ShootingStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub sym_kl: f64,
    pub residual_norm: f64,
    pub step: f64,
}

/// Outcome of [`shoot`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShootingReport {
    /// Initial velocity in the normalized frame (start point at the origin).
    pub velocity_origin: TangentVector,
    /// Initial velocity at the original start point.
    pub velocity: TangentVector,
    pub distance: f64,
    pub iterations: usize,
    /// Final symmetrized KL divergence between the geodesic endpoint and the target.
    pub sym_kl: f64,
    pub trace: Vec<TraceRow>,
    pub status: ShootingStatus,
}

impl ShootingReport {
    pub fn converged(&self) -> bool {
        self.status == ShootingStatus::Converged
    }
}

/// A vector at `at` pointing toward `toward`, per `kind`.
pub fn residual_vector(
    at: &GaussianPoint,
    toward: &GaussianPoint,
    kind: ResidualKind,
) -> Result<TangentVector> {
    let prob = normalize_default(at, toward)?;
    let local = origin_residual(&prob.target, kind)?;
    Ok(prob.denormalize_velocity(&local))
}

fn origin_residual(target: &GaussianPoint, kind: ResidualKind) -> Result<TangentVector> {
    match kind.approx() {
        None => Ok(euclid_residual(target)),
        Some(k) => approx_velocity(k, target),
    }
}

fn euclid_residual(target: &GaussianPoint) -> TangentVector {
    let d = target.dim();
    TangentVector {
        u_mu: target.mu().clone(),
        u_sigma: target.sigma() - &SymMatrix::identity(d),
    }
}

/// Quantities of the geodesic needed by the transport equations at one time.
struct GeodesicState {
    precision: DMatrix<f64>,
    dmu: DVector<f64>,
    dsigma: DMatrix<f64>,
}

fn state_from_exp(e: &DMatrix<f64>, v: &TangentVector) -> Result<GeodesicState> {
    let d = v.dim();
    let canon = canonical_from_augmented(e, d);
    let point = canon.to_gaussian()?;
    let sigma = point.sigma().matrix();
    let dmu = sigma * &v.u_mu;
    let dsigma = sigma * (v.u_sigma.matrix() - &v.u_mu * point.mu().transpose());
    let dsigma = (&dsigma + dsigma.transpose()) * 0.5;
    Ok(GeodesicState {
        precision: canon.precision.into_matrix(),
        dmu,
        dsigma,
    })
}

/// States at `t_j = 1 − j/(2N)`, `j = 0..=2N`, generated by repeated
/// multiplication with `exp(−M/(2N))` and periodically re-anchored.
fn geodesic_states(v: &TangentVector, n: usize) -> Result<Vec<GeodesicState>> {
    let m = augmented_generator(v);
    let half = 2 * n;
    let step = expm(&(&m * (-1.0 / half as f64)))?;
    let mut out = Vec::with_capacity(half + 1);
    let mut current = expm(&m)?;
    for j in 0..=half {
        if j > 0 {
            current = if j % REANCHOR_EVERY == 0 {
                expm(&(&m * (1.0 - j as f64 / half as f64)))?
            } else {
                &current * &step
            };
        }
        out.push(state_from_exp(&current, v)?);
    }
    Ok(out)
}

fn transport_rhs(u: &TangentVector, s: &GeodesicState) -> TangentVector {
    let a = &s.dsigma * &s.precision;
    let du_mu = (&a * &u.u_mu + u.u_sigma.matrix() * (&s.precision * &s.dmu)) * 0.5;
    let au = &a * u.u_sigma.matrix();
    let cross = &s.dmu * u.u_mu.transpose();
    let du_sigma = (&au + au.transpose() - &cross - cross.transpose()) * 0.5;
    TangentVector {
        u_mu: du_mu,
        u_sigma: SymMatrix::new(du_sigma),
    }
}

/// Parallel-transports `r`, attached at the end of the geodesic from the
/// origin with velocity `v`, back to the origin with fixed-step RK4.
pub fn parallel_transport_back(
    r: &TangentVector,
    v: &TangentVector,
    steps_per_length: usize,
) -> Result<TangentVector> {
    check_dim(v.dim(), r.dim())?;
    let length = v.origin_norm();
    let n = (steps_per_length as f64 * length).ceil() as usize;
    if n == 0 {
        return Ok(r.clone());
    }
    let states = geodesic_states(v, n)?;
    let h = -1.0 / n as f64;
    let mut u = r.clone();
    for i in 0..n {
        let (s0, s1, s2) = (&states[2 * i], &states[2 * i + 1], &states[2 * i + 2]);
        let k1 = transport_rhs(&u, s0);
        let k2 = transport_rhs(&u.axpy(0.5 * h, &k1), s1);
        let k3 = transport_rhs(&u.axpy(0.5 * h, &k2), s1);
        let k4 = transport_rhs(&u.axpy(h, &k3), s2);
        let incr = k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4);
        u = u.axpy(h / 6.0, &incr);
    }
    if !u.is_finite() {
        return Err(GeoError::NumericalOverflow(
            "parallel transport diverged".into(),
        ));
    }
    Ok(u)
}

fn fire(v: &TangentVector) -> Result<GaussianPoint> {
    geodesic_from_origin(v, 1.0, GeodesicMethod::MatrixExp)
}

fn point_difference(p: &GaussianPoint, q: &GaussianPoint) -> TangentVector {
    TangentVector {
        u_mu: p.mu() - q.mu(),
        u_sigma: p.sigma() - q.sigma(),
    }
}

/// Initial origin-frame velocity for the normalized problem.
fn initial_velocity(
    prob: &OriginProblem,
    v0: Option<&TangentVector>,
    kind: InitKind,
) -> TangentVector {
    if let Some(v0) = v0 {
        return prob.normalize_velocity(v0);
    }
    match kind.approx() {
        None => TangentVector::zeros(prob.dim()),
        Some(k) => {
            approx_velocity(k, &prob.target).unwrap_or_else(|_| TangentVector::zeros(prob.dim()))
        }
    }
}

/// Finds the geodesic from `a` to `b` by shooting. `v0` is an optional warm
/// start at `a` in the original frame.
pub fn shoot(
    a: &GaussianPoint,
    b: &GaussianPoint,
    v0: Option<&TangentVector>,
    cfg: &ShootingConfig,
) -> Result<ShootingReport> {
    cfg.validate()?;
    check_dim(a.dim(), b.dim())?;
    if let Some(v0) = v0 {
        check_dim(a.dim(), v0.dim())?;
    }
    let prob = normalize_default(a, b)?;
    let target = &prob.target;
    let d = prob.dim();

    let mut v = initial_velocity(&prob, v0, cfg.init_kind);
    let mut g = match fire(&v) {
        Ok(g) => g,
        Err(_) => {
            v = TangentVector::zeros(d);
            GaussianPoint::origin(d)
        }
    };
    let mut skl = sym_kl(&g, target)?;
    let mut trace = vec![TraceRow {
        iteration: 0,
        sym_kl: skl,
        residual_norm: 0.0,
        step: 0.0,
    }];
    let mut best = (skl, v.clone());
    let mut idle = 0;
    let mut iterations = 0;

    let status = loop {
        if skl <= cfg.tol {
            break ShootingStatus::Converged;
        }
        if iterations >= cfg.max_iters {
            break ShootingStatus::MaxIters;
        }
        match shooting_step(&v, &g, skl, target, cfg) {
            Ok((next_v, next_g, next_skl, r_norm, s)) => {
                iterations += 1;
                idle = if next_skl < best.0 * (1.0 - MIN_PROGRESS) {
                    0
                } else {
                    idle + 1
                };
                v = next_v;
                g = next_g;
                skl = next_skl;
                trace.push(TraceRow {
                    iteration: iterations,
                    sym_kl: skl,
                    residual_norm: r_norm,
                    step: s,
                });
                if skl < best.0 {
                    best = (skl, v.clone());
                }
                if idle >= DIVERGENCE_WINDOW {
                    break ShootingStatus::Diverged;
                }
            }
            Err(_) => break ShootingStatus::NumericalFailure,
        }
    };

    let (final_skl, final_v) = if status == ShootingStatus::Converged {
        (skl, v)
    } else {
        best
    };
    Ok(ShootingReport {
        velocity: prob.denormalize_velocity(&final_v),
        distance: final_v.origin_norm(),
        velocity_origin: final_v,
        iterations,
        sym_kl: final_skl,
        trace,
        status,
    })
}

/// One shooting update; returns the new velocity, its endpoint and that
/// endpoint's divergence from the target, the residual norm and the step.
fn shooting_step(
    v: &TangentVector,
    g: &GaussianPoint,
    skl: f64,
    target: &GaussianPoint,
    cfg: &ShootingConfig,
) -> Result<(TangentVector, GaussianPoint, f64, f64, f64)> {
    let r = match residual_vector(g, target, cfg.residual_kind) {
        Err(GeoError::SingularTaylor(_)) => residual_vector(g, target, ResidualKind::Euclid)?,
        other => other?,
    };
    let g_prec = g.precision()?;
    let r_norm = inner_with_precision(&r, &r, &g_prec).max(0.0).sqrt();
    let dv = parallel_transport_back(&r, v, cfg.steps_per_length)?;
    let dv_norm = dv.origin_norm();
    if !(dv_norm > 0.0) || !dv_norm.is_finite() {
        return Err(GeoError::NumericalOverflow(
            "vanishing velocity correction".into(),
        ));
    }
    let h = (cfg.tol / dv_norm).max(MIN_FD_STEP);
    let g_h = fire(&v.axpy(h, &dv))?;
    let j = point_difference(&g_h, g).scale(1.0 / h);
    let jj = inner_with_precision(&j, &j, &g_prec);
    if !(jj > 0.0) || !jj.is_finite() {
        return Err(GeoError::NumericalOverflow(
            "degenerate Jacobi field".into(),
        ));
    }
    let mut s = inner_with_precision(&point_difference(target, g), &j, &g_prec) / jj;
    if r_norm > cfg.r_norm_max {
        s *= cfg.r_norm_max / r_norm;
    }
    // Backtrack until the endpoint moves closer to the target; if no halving
    // achieves that, fall back to the first representable update.
    let mut fallback = None;
    for _ in 0..MAX_HALVINGS {
        let candidate = v.axpy(s, &dv);
        if let Ok(next_g) = fire(&candidate) {
            if let Ok(next_skl) = sym_kl(&next_g, target) {
                if next_skl < skl {
                    return Ok((candidate, next_g, next_skl, r_norm, s));
                }
                if fallback.is_none() && next_skl.is_finite() {
                    fallback = Some((candidate, next_g, next_skl, r_norm, s));
                }
            }
        }
        s *= 0.5;
    }
    fallback
        .ok_or_else(|| GeoError::NumericalOverflow("update left the representable range".into()))
}

/// The point at time `t` along the geodesic from `a` with initial velocity `v` (original frame).
pub fn geodesic_from(a: &GaussianPoint, v: &TangentVector, t: f64) -> Result<GaussianPoint> {
    let prob = normalize_default(a, a)?;
    let local = geodesic_from_origin(&prob.normalize_velocity(v), t, GeodesicMethod::MatrixExp)?;
    prob.denormalize_point(&local)
}

/// Settings of path refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    /// The path has `2^levels + 1` points.
    pub levels: u32,
    pub init_path: PathKind,
    /// Cull points when a sweep shortens the path by less than this fraction.
    pub req_improvement: f64,
    /// Overall endpoint tolerance; sub-problems use a tenth of it.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Settings for the per-segment and final shooting calls (its `tol` is overridden).
    pub sub: ShootingConfig,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            levels: 7,
            init_path: PathKind::Moment,
            req_improvement: 0.01,
            tol: 1e-10,
            max_sweeps: 200,
            sub: ShootingConfig::default(),
        }
    }
}

/// Progress after one full (odd then even) sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    /// Shooting iterations spent so far, summed over all sub-problems.
    pub cumulative_iterations: usize,
    /// Divergence between the extrapolated first-segment geodesic and the target.
    pub sym_kl: f64,
    /// Total length of the chain of geodesic segments.
    pub total_length: f64,
    pub points: usize,
}

/// Outcome of [`path_refine`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementReport {
    /// Final velocity, distance and status. For the adaptive variant this is
    /// the closing plain shoot; otherwise it is assembled from the chain.
    pub result: ShootingReport,
    pub sweeps: Vec<SweepRecord>,
    pub path: Vec<GaussianPoint>,
    pub total_iterations: usize,
}

impl RefinementReport {
    pub fn converged(&self) -> bool {
        self.result.converged()
    }
}

/// Refines a chain of points between `a` and `b` onto the geodesic.
pub fn path_refine(
    a: &GaussianPoint,
    b: &GaussianPoint,
    cfg: &RefinementConfig,
    adaptive: bool,
) -> Result<RefinementReport> {
    check_dim(a.dim(), b.dim())?;
    if cfg.levels == 0 || cfg.levels > 20 {
        return Err(GeoError::InvalidInput(
            "levels must be between 1 and 20".into(),
        ));
    }
    if !(cfg.tol > 0.0) {
        return Err(GeoError::InvalidInput("tol must be positive".into()));
    }
    let sub = ShootingConfig {
        tol: cfg.tol / 10.0,
        ..cfg.sub
    };
    let eval = PathEvaluator::new(cfg.init_path, a, b)?;
    let mut n = (1usize << cfg.levels) + 1;
    let mut points: Vec<GaussianPoint> = (0..n)
        .map(|i| {
            eval.point(if i == n - 1 {
                1.0
            } else {
                i as f64 / (n - 1) as f64
            })
        })
        .collect::<Result<_>>()?;
    let mut vels: Vec<Option<TangentVector>> = vec![None; n - 2];
    let mut sweeps = Vec::new();
    let mut total_iterations = 0;
    let mut l_old = f64::INFINITY;
    let mut reached = false;
    let mut last_skl = f64::INFINITY;
    let mut last_len = 0.0;

    for sweep in 1..=cfg.max_sweeps {
        // segments starting at odd indices move the even interior points,
        // then segments starting at even indices move the odd ones
        for parity in [1usize, 0] {
            let starts: Vec<usize> = (0..n - 2).filter(|k| k % 2 == parity).collect();
            let results: Vec<Result<(ShootingReport, GaussianPoint)>> = starts
                .par_iter()
                .map(|&k| {
                    let rep = shoot(&points[k], &points[k + 2], vels[k].as_ref(), &sub)?;
                    let mid = geodesic_from(&points[k], &rep.velocity, 0.5)?;
                    Ok((rep, mid))
                })
                .collect();
            for (&k, res) in starts.iter().zip(results) {
                let (rep, mid) = res?;
                total_iterations += rep.iterations;
                points[k + 1] = mid;
                vels[k] = Some(rep.velocity);
            }
        }
        let mut length = 0.0;
        for k in (0..n - 2).step_by(2) {
            length += segment_distance(&points[k], vels[k].as_ref())?;
        }
        let v1 = vels[0].clone().expect("first segment solved");
        let reach = 0.5 * (n - 1) as f64;
        let skl = match geodesic_from(a, &v1.scale(reach), 1.0) {
            Ok(end) => sym_kl(&end, b)?,
            Err(_) => f64::INFINITY,
        };
        sweeps.push(SweepRecord {
            sweep,
            cumulative_iterations: total_iterations,
            sym_kl: skl,
            total_length: length,
            points: n,
        });
        last_skl = skl;
        last_len = length;
        if skl < cfg.tol {
            reached = true;
            break;
        }
        let stagnant = length / l_old > 1.0 - cfg.req_improvement;
        if adaptive && stagnant && n == 3 {
            // a single segment left: the final shoot below is the same problem
            break;
        }
        if adaptive && stagnant && n > 3 {
            let kept = (n - 1) / 2 + 1;
            points = (0..kept).map(|i| points[2 * i].clone()).collect();
            vels = (0..kept - 2)
                .map(|i| vels[2 * i].as_ref().map(|v| v.scale(2.0)))
                .collect();
            n = kept;
        }
        l_old = length;
    }

    let reach = 0.5 * (n - 1) as f64;
    let v1 = vels[0].clone().map(|v| v.scale(reach));
    let result = if adaptive {
        let final_cfg = ShootingConfig {
            tol: cfg.tol,
            ..cfg.sub
        };
        let rep = shoot(a, b, v1.as_ref(), &final_cfg)?;
        total_iterations += rep.iterations;
        rep
    } else {
        let prob = normalize_default(a, b)?;
        let velocity = v1.unwrap_or_else(|| TangentVector::zeros(a.dim()));
        let velocity_origin = prob.normalize_velocity(&velocity);
        ShootingReport {
            velocity_origin,
            velocity,
            distance: last_len,
            iterations: total_iterations,
            sym_kl: last_skl,
            trace: Vec::new(),
            status: if reached {
                ShootingStatus::Converged
            } else {
                ShootingStatus::MaxIters
            },
        }
    };
    Ok(RefinementReport {
        result,
        sweeps,
        path: points,
        total_iterations,
    })
}

/// Fisher length of the geodesic from `p` with velocity `v`.
/// Relative central-difference step of [`newton_shoot`]'s Jacobian.
pub const NEWTON_FD_STEP: f64 = 1e-6;

/// Coordinates of a tangent vector: `u_μ`, then the upper triangle of `u_Σ` row by row.
fn tangent_coords(v: &TangentVector) -> DVector<f64> {
    let d = v.dim();
    let s = v.u_sigma.matrix();
    let mut out = Vec::with_capacity(d + d * (d + 1) / 2);
    out.extend(v.u_mu.iter());
    for i in 0..d {
        for j in i..d {
            out.push(s[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

fn tangent_from_coords(c: &DVector<f64>, d: usize) -> TangentVector {
    let mut s = DMatrix::zeros(d, d);
    let mut k = d;
    for i in 0..d {
        for j in i..d {
            s[(i, j)] = c[k];
            s[(j, i)] = c[k];
            k += 1;
        }
    }
    TangentVector {
        u_mu: DVector::from_iterator(d, c.iter().take(d).copied()),
        u_sigma: SymMatrix::new(s),
    }
}

/// Endpoint mismatch in the frame that whitens the target, so that all
/// coordinates are on the scale of the Fisher metric there.
fn whitened_mismatch(g: &GaussianPoint, target: &GaussianPoint, w: &DMatrix<f64>) -> DVector<f64> {
    let diff = TangentVector {
        u_mu: w * (g.mu() - target.mu()),
        u_sigma: SymMatrix::new(w * (g.sigma().matrix() - target.sigma().matrix()) * w.transpose()),
    };
    tangent_coords(&diff)
}

/// Shooting by Newton's method on the endpoint map, with a central-difference
/// Jacobian over all velocity coordinates and backtracking on the endpoint
/// divergence. Each iteration costs `2n + 1` geodesic evaluations for `n`
/// velocity coordinates and needs no transport, but only converges from a
/// good starting velocity; it is meant to polish the result of
/// [`path_refine`] to tight tolerances.
pub fn newton_shoot(
    a: &GaussianPoint,
    b: &GaussianPoint,
    v0: Option<&TangentVector>,
    tol: f64,
    max_iters: usize,
) -> Result<ShootingReport> {
    check_dim(a.dim(), b.dim())?;
    if !(tol > 0.0) {
        return Err(GeoError::InvalidInput("tol must be positive".into()));
    }
    let prob = normalize_default(a, b)?;
    let target = &prob.target;
    let d = prob.dim();
    let w = sym_fn(target.sigma(), SymFn::InvSqrt)?.into_matrix();

    let mut v = match v0 {
        Some(v0) => {
            check_dim(d, v0.dim())?;
            prob.normalize_velocity(v0)
        }
        None => TangentVector::zeros(d),
    };
    let mut g = fire(&v)?;
    let mut skl = sym_kl(&g, target)?;
    let mut trace = vec![TraceRow {
        iteration: 0,
        sym_kl: skl,
        residual_norm: 0.0,
        step: 0.0,
    }];
    let mut iterations = 0;

    let status = loop {
        if skl <= tol {
            break ShootingStatus::Converged;
        }
        if iterations >= max_iters {
            break ShootingStatus::MaxIters;
        }
        let step = match newton_step(&v, &g, skl, target, &w) {
            Ok(step) => step,
            Err(_) => break ShootingStatus::NumericalFailure,
        };
        let Some((next_v, next_g, next_skl, r_norm, s)) = step else {
            break ShootingStatus::Diverged;
        };
        iterations += 1;
        v = next_v;
        g = next_g;
        skl = next_skl;
        trace.push(TraceRow {
            iteration: iterations,
            sym_kl: skl,
            residual_norm: r_norm,
            step: s,
        });
    };

    Ok(ShootingReport {
        velocity: prob.denormalize_velocity(&v),
        distance: v.origin_norm(),
        velocity_origin: v,
        iterations,
        sym_kl: skl,
        trace,
        status,
    })
}

/// One damped Newton update, or `None` if no damping reduces the divergence.
#[allow(clippy::type_complexity)]
fn newton_step(
    v: &TangentVector,
    g: &GaussianPoint,
    skl: f64,
    target: &GaussianPoint,
    w: &DMatrix<f64>,
) -> Result<Option<(TangentVector, GaussianPoint, f64, f64, f64)>> {
    let d = v.dim();
    let c = tangent_coords(v);
    let n = c.len();
    let r = whitened_mismatch(g, target, w);
    let eta = NEWTON_FD_STEP * v.origin_norm().max(1.0);
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut plus = c.clone();
        let mut minus = c.clone();
        plus[k] += eta;
        minus[k] -= eta;
        let gp = fire(&tangent_from_coords(&plus, d))?;
        let gm = fire(&tangent_from_coords(&minus, d))?;
        let col =
            (whitened_mismatch(&gp, target, w) - whitened_mismatch(&gm, target, w)) / (2.0 * eta);
        jac.set_column(k, &col);
    }
    let delta = jac
        .lu()
        .solve(&(-&r))
        .ok_or_else(|| GeoError::NumericalOverflow("singular endpoint Jacobian".into()))?;
    let delta = tangent_from_coords(&delta, d);
    let mut s = 1.0;
    for _ in 0..MAX_HALVINGS {
        let candidate = v.axpy(s, &delta);
        if let Ok(next_g) = fire(&candidate) {
            if let Ok(next_skl) = sym_kl(&next_g, target) {
                if next_skl < skl {
                    return Ok(Some((candidate, next_g, next_skl, r.norm(), s)));
                }
            }
        }
        s *= 0.5;
    }
    Ok(None)
}

fn segment_distance(p: &GaussianPoint, v: Option<&TangentVector>) -> Result<f64> {
    match v {
        None => Ok(0.0),
        Some(v) => {
            let prec = p.precision()?;
            Ok(inner_with_precision(v, v, &prec).max(0.0).sqrt())
        }
    }
}
