//! Non-geodesic interpolation paths between normals, their Fisher lengths,
//! and cheap approximations to the geodesic initial velocity.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closed_form::AxisConstants;
use crate::error::{check_dim, GeoError, Result};
use crate::linalg::{basis_with_leading, spectral_fn, Spectrum, SymFn, SymMatrix, CLUSTER_REL_GAP};
use crate::manifold::{
    metric_sq, normalize_default, CanonicalPoint, GaussianPoint, OriginProblem, TangentVector,
};

/// Default number of quadrature segments for [`path_length`].
pub const DEFAULT_SEGMENTS: usize = 1000;

/// Eigenvalues of `Σ_t` this close to one make the small-`x` approximation singular.
pub const TAYLOR_SINGULAR_TOL: f64 = 1e-10;

/// The closed-form paths between two normals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// Linear in natural parameters `(Σ⁻¹μ, Σ⁻¹)`.
    Annealing,
    /// Linear mean; covariance interpolated with a transient variance injection along the mean shift.
    Moment,
    /// 2-Wasserstein displacement interpolation.
    Wasserstein,
    /// Projection of the SPD-embedding geodesic back onto the normal family.
    Projection,
    /// Linear in `(μ, Σ)`.
    Euclidean,
}

impl PathKind {
    pub const ALL: [PathKind; 5] = [
        PathKind::Annealing,
        PathKind::Moment,
        PathKind::Wasserstein,
        PathKind::Projection,
        PathKind::Euclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PathKind::Annealing => "annealing",
            PathKind::Moment => "moment",
            PathKind::Wasserstein => "wasserstein",
            PathKind::Projection => "projection",
            PathKind::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PathKind {
    type Err = GeoError;
    fn from_str(s: &str) -> Result<Self> {
        PathKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| GeoError::InvalidInput(format!("unknown path kind '{s}'")))
    }
}

/// A path with its endpoint-dependent precomputation done once, so that many
/// points along it can be evaluated cheaply.
#[derive(Debug, Clone)]
pub struct PathEvaluator {
    kind: PathKind,
    a: GaussianPoint,
    b: GaussianPoint,
    state: PathState,
}

#[derive(Debug, Clone)]
enum PathState {
    Annealing {
        ca: CanonicalPoint,
        cb: CanonicalPoint,
    },
    Moment,
    Wasserstein {
        c: DMatrix<f64>,
    },
    Projection(Box<(OriginProblem, Spectrum)>),
    Euclidean,
}

impl PathEvaluator {
    pub fn new(kind: PathKind, a: &GaussianPoint, b: &GaussianPoint) -> Result<Self> {
        check_dim(a.dim(), b.dim())?;
        let state = match kind {
            PathKind::Annealing => PathState::Annealing {
                ca: a.to_canonical()?,
                cb: b.to_canonical()?,
            },
            PathKind::Moment => PathState::Moment,
            PathKind::Euclidean => PathState::Euclidean,
            PathKind::Wasserstein => {
                let root1 = spectral_fn(&b.sigma().spectrum(), SymFn::Sqrt)?;
                let inner = a.sigma().congruence(root1.matrix());
                let inv_root = spectral_fn(&inner.spectrum(), SymFn::InvSqrt)?;
                let c = inv_root.congruence(root1.matrix());
                PathState::Wasserstein { c: c.into_matrix() }
            }
            PathKind::Projection => {
                let prob = normalize_default(a, b)?;
                let embedded = embed(&prob.target).spectrum();
                embedded.check_positive_definite()?;
                PathState::Projection(Box::new((prob, embedded)))
            }
        };
        Ok(PathEvaluator {
            kind,
            a: a.clone(),
            b: b.clone(),
            state,
        })
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    /// The point at parameter `t`; exactly `a` at `t = 0` and `b` at `t = 1`.
    pub fn point(&self, t: f64) -> Result<GaussianPoint> {
        if t == 0.0 {
            return Ok(self.a.clone());
        }
        if t == 1.0 {
            return Ok(self.b.clone());
        }
        let (a, b) = (&self.a, &self.b);
        let s = 1.0 - t;
        match &self.state {
            PathState::Annealing { ca, cb } => CanonicalPoint {
                delta: &ca.delta * s + &cb.delta * t,
                precision: &ca.precision.scale(s) + &cb.precision.scale(t),
            }
            .to_gaussian(),
            PathState::Moment => {
                let shift = b.mu() - a.mu();
                let sigma = &(&a.sigma().scale(s) + &b.sigma().scale(t))
                    + &SymMatrix::outer(&shift).scale(0.25 * t * s);
                GaussianPoint::new(a.mu() * s + b.mu() * t, sigma)
            }
            PathState::Euclidean => {
                let sigma = &a.sigma().scale(s) + &b.sigma().scale(t);
                GaussianPoint::new(a.mu() * s + b.mu() * t, sigma)
            }
            PathState::Wasserstein { c } => {
                let n = a.dim();
                let m = DMatrix::identity(n, n) * s + c * t;
                GaussianPoint::new(a.mu() * s + b.mu() * t, a.sigma().congruence(&m))
            }
            PathState::Projection(projection) => {
                let (prob, embedded) = projection.as_ref();
                let d = a.dim();
                let p = embedded.map(|l| l.powf(t));
                let pm = p.matrix();
                let beta = pm[(d, d)];
                let p_mu = pm.view((0, d), (d, 1)).column(0).into_owned();
                let p_sigma = pm.view((0, 0), (d, d)).into_owned();
                let mu = &p_mu / beta;
                let sigma = SymMatrix::new(p_sigma - &p_mu * p_mu.transpose() / beta);
                let local = GaussianPoint::new(mu, sigma)?;
                prob.denormalize_point(&local)
            }
        }
    }
}

/// The SPD embedding `[[Σ + μμᵀ, μ], [μᵀ, 1]]`.
pub fn embed(p: &GaussianPoint) -> SymMatrix {
    let d = p.dim();
    let mut m = DMatrix::zeros(d + 1, d + 1);
    let mu = p.mu();
    m.view_mut((0, 0), (d, d))
        .copy_from(&(p.sigma().matrix() + mu * mu.transpose()));
    for i in 0..d {
        m[(i, d)] = mu[i];
        m[(d, i)] = mu[i];
    }
    m[(d, d)] = 1.0;
    SymMatrix::new(m)
}

/// The point at parameter `t ∈ [0, 1]` along the chosen path from `a` to `b`.
pub fn path_point(
    kind: PathKind,
    a: &GaussianPoint,
    b: &GaussianPoint,
    t: f64,
) -> Result<GaussianPoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GeoError::InvalidInput(format!(
            "path parameter {t} outside [0, 1]"
        )));
    }
    PathEvaluator::new(kind, a, b)?.point(t)
}

/// Uniformly sampled path with its Fisher length.
#[derive(Debug, Clone)]
pub struct DiscretizedPath {
    pub ts: Vec<f64>,
    pub samples: Vec<GaussianPoint>,
    pub length: f64,
}

/// Samples `n_samples ≥ 2` uniformly spaced points of a path and measures its length.
pub fn discretize(
    kind: PathKind,
    a: &GaussianPoint,
    b: &GaussianPoint,
    n_samples: usize,
    segments: usize,
) -> Result<DiscretizedPath> {
    if n_samples < 2 {
        return Err(GeoError::InvalidInput(
            "at least two samples are required".into(),
        ));
    }
    let eval = PathEvaluator::new(kind, a, b)?;
    let ts: Vec<f64> = (0..n_samples).map(|i| grid(i, n_samples - 1)).collect();
    let samples = ts
        .iter()
        .map(|&t| eval.point(t))
        .collect::<Result<Vec<_>>>()?;
    let length = evaluator_length(&eval, segments)?;
    Ok(DiscretizedPath {
        ts,
        samples,
        length,
    })
}

fn grid(i: usize, n: usize) -> f64 {
    if i == n {
        1.0
    } else {
        i as f64 / n as f64
    }
}

/// Fisher length of a path by midpoint quadrature over `segments` pieces.
pub fn path_length(
    kind: PathKind,
    a: &GaussianPoint,
    b: &GaussianPoint,
    segments: usize,
) -> Result<f64> {
    evaluator_length(&PathEvaluator::new(kind, a, b)?, segments)
}

fn evaluator_length(eval: &PathEvaluator, segments: usize) -> Result<f64> {
    if segments < 2 {
        return Err(GeoError::InvalidInput(
            "at least two segments are required".into(),
        ));
    }
    let mut total = 0.0;
    let mut prev = eval.point(0.0)?;
    for i in 0..segments {
        let next = eval.point(grid(i + 1, segments))?;
        let mid = eval.point((i as f64 + 0.5) / segments as f64)?;
        total += segment_length(&prev, &next, &mid)?;
        prev = next;
    }
    Ok(total)
}

/// Length of the chord `p → q` measured with the metric at `mid`.
pub fn segment_length(p: &GaussianPoint, q: &GaussianPoint, mid: &GaussianPoint) -> Result<f64> {
    let diff = TangentVector::new(q.mu() - p.mu(), q.sigma() - p.sigma())?;
    Ok(metric_sq(mid, &diff)?.sqrt())
}

/// Fisher length of an arbitrary polyline of points, each chord measured at
/// the metric of its arithmetic midpoint in `(μ, Σ)`.
pub fn polyline_length(points: &[GaussianPoint]) -> Result<f64> {
    let mut total = 0.0;
    for w in points.windows(2) {
        let mid = GaussianPoint::new(
            (w[0].mu() + w[1].mu()) * 0.5,
            (w[0].sigma() + w[1].sigma()).scale(0.5),
        )?;
        total += segment_length(&w[0], &w[1], &mid)?;
    }
    Ok(total)
}

/// Approximations to the geodesic initial velocity at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxKind {
    /// Small-`x` expansion around the equal-means solution.
    Taylor,
    /// Per-eigenvector univariate solutions, combined.
    Eigen,
    /// Blocks of the logarithm of the SPD embedding.
    Projection,
}

impl ApproxKind {
    pub const ALL: [ApproxKind; 3] = [
        ApproxKind::Taylor,
        ApproxKind::Eigen,
        ApproxKind::Projection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ApproxKind::Taylor => "taylor",
            ApproxKind::Eigen => "eigen",
            ApproxKind::Projection => "projection",
        }
    }
}

impl fmt::Display for ApproxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Approximate initial velocity `(x, B)` of the geodesic from the origin to `target`.
pub fn approx_velocity(kind: ApproxKind, target: &GaussianPoint) -> Result<TangentVector> {
    match kind {
        ApproxKind::Taylor => taylor_velocity(target),
        ApproxKind::Eigen => eigen_velocity(target),
        ApproxKind::Projection => projection_velocity(target),
    }
}

fn taylor_velocity(target: &GaussianPoint) -> Result<TangentVector> {
    let spec = target.sigma().spectrum();
    spec.check_positive_definite()?;
    if let Some(&bad) = spec
        .values
        .iter()
        .find(|l| (*l - 1.0).abs() < TAYLOR_SINGULAR_TOL)
    {
        if target.mu().amax() > 0.0 {
            return Err(GeoError::SingularTaylor(bad));
        }
    }
    let b = spec.map(f64::ln);
    // (I − (I − Σ)⁻¹) log Σ · Σ⁻¹ has eigenvalues log λ / (λ − 1)
    let weights = spec.map(|l| {
        if (l - 1.0).abs() < TAYLOR_SINGULAR_TOL {
            1.0
        } else {
            l.ln() / (l - 1.0)
        }
    });
    let x = weights.matrix() * target.mu();
    TangentVector::new(x, b)
}

fn eigen_velocity(target: &GaussianPoint) -> Result<TangentVector> {
    let d = target.dim();
    let precision = target.sigma().pd_inverse()?;
    let delta_t = precision.matrix() * target.mu();
    let spec = precision.spectrum();
    spec.check_positive_definite()?;
    // within a repeated eigenvalue any basis is valid: pick the one aligned with δ_t
    let mut vectors = spec.vectors.clone();
    for cluster in spec.clusters(CLUSTER_REL_GAP) {
        if cluster.len() < 2 {
            continue;
        }
        let basis = spec
            .vectors
            .columns(cluster.start, cluster.len())
            .into_owned();
        let proj = &basis * (basis.transpose() * &delta_t);
        if proj.norm() > 0.0 {
            vectors
                .columns_mut(cluster.start, cluster.len())
                .copy_from(&basis_with_leading(&proj, &basis));
        }
    }
    let mut x = DVector::zeros(d);
    let mut b = DMatrix::zeros(d, d);
    for j in 0..d {
        let v = vectors.column(j);
        let p = v.dot(&delta_t);
        let lambda = spec.values[j];
        let c = AxisConstants::new(p.abs(), lambda);
        let bj = if p == 0.0 { -lambda.ln() } else { c.b() };
        b += v * v.transpose() * bj;
        x += v * (p.signum() * c.x());
    }
    TangentVector::new(x, SymMatrix::new(b))
}

fn projection_velocity(target: &GaussianPoint) -> Result<TangentVector> {
    let d = target.dim();
    let log = spectral_fn(&embed(target).spectrum(), SymFn::Log)?;
    let m = log.matrix();
    let b = SymMatrix::new(m.view((0, 0), (d, d)).into_owned());
    let x = m.view((0, d), (d, 1)).column(0).into_owned();
    TangentVector::new(x, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::solve_special;
    use crate::linalg::{random_orthogonal, rel_frobenius};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uni(mu: f64, var: f64) -> GaussianPoint {
        GaussianPoint::from_slices(&[mu], &[var]).unwrap()
    }

    #[test]
    fn endpoints_exact() {
        let a = GaussianPoint::from_slices(&[1.0, 2.0], &[1.0, 0.1, 0.1, 10.0]).unwrap();
        let b = GaussianPoint::from_slices(&[7.0, 3.5], &[10.0, -0.8, -0.8, 1.0]).unwrap();
        for kind in PathKind::ALL {
            assert_eq!(path_point(kind, &a, &b, 0.0).unwrap(), a);
            assert_eq!(path_point(kind, &a, &b, 1.0).unwrap(), b);
        }
    }

    #[test]
    fn wasserstein_univariate_is_linear_in_std() {
        let p = path_point(PathKind::Wasserstein, &uni(0.0, 1.0), &uni(0.0, 4.0), 0.5).unwrap();
        assert!((p.sigma().matrix()[(0, 0)] - 2.25).abs() < 1e-14);
    }

    #[test]
    fn moment_midpoint() {
        let p = path_point(PathKind::Moment, &uni(0.0, 1.0), &uni(2.0, 1.0), 0.5).unwrap();
        assert!((p.mu()[0] - 1.0).abs() < 1e-15);
        assert!((p.sigma().matrix()[(0, 0)] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn annealing_linear_in_canonical() {
        let a = GaussianPoint::from_slices(&[1.0, -1.0], &[2.0, 0.3, 0.3, 0.5]).unwrap();
        let b = GaussianPoint::from_slices(&[-2.0, 0.5], &[0.7, -0.1, -0.1, 3.0]).unwrap();
        let (ca, cb) = (a.to_canonical().unwrap(), b.to_canonical().unwrap());
        for &t in &[0.2, 0.5, 0.9] {
            let c = path_point(PathKind::Annealing, &a, &b, t)
                .unwrap()
                .to_canonical()
                .unwrap();
            let want = &ca.delta * (1.0 - t) + &cb.delta * t;
            assert!((c.delta - want).amax() < 1e-12);
        }
    }

    #[test]
    fn projection_path_reconstructs_embedding() {
        let t_pt = GaussianPoint::from_slices(&[1.0, 2.0], &[1.5, 0.2, 0.2, 0.6]).unwrap();
        let o = GaussianPoint::origin(2);
        let emb = embed(&t_pt).spectrum();
        for &t in &[0.25, 0.6] {
            let p = path_point(PathKind::Projection, &o, &t_pt, t).unwrap();
            let pt = emb.map(|l| l.powf(t));
            let beta = pt.matrix()[(2, 2)];
            let rebuilt = p.sigma().matrix() + p.mu() * p.mu().transpose() * beta;
            assert!(rel_frobenius(&pt.matrix().view((0, 0), (2, 2)).into_owned(), &rebuilt) < 1e-9);
        }
    }

    #[test]
    fn lengths_bound_geodesic_distance() {
        let o = GaussianPoint::origin(2);
        let b = GaussianPoint::new(
            DVector::zeros(2),
            SymMatrix::from_diagonal(&[2f64.exp(), (-2f64).exp()]),
        )
        .unwrap();
        assert_eq!(path_length(PathKind::Annealing, &o, &o, 10).unwrap(), 0.0);
        for kind in PathKind::ALL {
            let l = path_length(kind, &o, &b, DEFAULT_SEGMENTS).unwrap();
            assert!(l >= 2.0 - 1e-6, "{kind}: {l}");
        }
        // equal means: annealing and projection trace the geodesic itself
        let l = path_length(PathKind::Projection, &o, &b, DEFAULT_SEGMENTS).unwrap();
        assert!((l - 2.0).abs() < 1e-6);
    }

    #[test]
    fn approximations_exact_at_equal_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = random_orthogonal(3, &mut rng).unwrap();
        let sigma = SymMatrix::from_diagonal(&[0.3, 2.0, 5.0]).congruence(&q);
        let t = GaussianPoint::new(DVector::zeros(3), sigma.clone()).unwrap();
        let log = spectral_fn(&sigma.spectrum(), SymFn::Log).unwrap();
        for kind in ApproxKind::ALL {
            let v = approx_velocity(kind, &t).unwrap();
            assert!(v.u_mu.amax() < 1e-14, "{kind}");
            assert!((v.u_sigma.matrix() - log.matrix()).amax() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn eigen_exact_on_axis_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for d in [2, 4] {
            let r = random_orthogonal(d, &mut rng).unwrap();
            let diag: Vec<f64> = (0..d)
                .map(|_| rng.random_range(-2.0..2.0f64).exp())
                .collect();
            let sigma = SymMatrix::from_diagonal(&diag).congruence(&r);
            let mu = sigma.matrix() * r.column(0) * rng.random_range(-3.0..3.0);
            let t = GaussianPoint::new(mu, sigma).unwrap();
            let exact = solve_special(&t).unwrap().velocity;
            let approx = approx_velocity(ApproxKind::Eigen, &t).unwrap();
            assert!(approx.sub(&exact).origin_norm() < 1e-10);
        }
        // repeated eigenvalue: mean inside a two-dimensional eigenspace
        let t = GaussianPoint::from_slices(&[1.0, 1.0], &[2.0, 0.0, 0.0, 2.0]).unwrap();
        let exact = solve_special(&t).unwrap().velocity;
        let approx = approx_velocity(ApproxKind::Eigen, &t).unwrap();
        assert!(approx.sub(&exact).origin_norm() < 1e-10);
    }

    #[test]
    fn taylor_singular_near_unit_eigenvalue() {
        let t = GaussianPoint::from_slices(&[1.0, 0.0], &[1.0, 0.0, 0.0, 2.0]).unwrap();
        assert!(matches!(
            approx_velocity(ApproxKind::Taylor, &t),
            Err(GeoError::SingularTaylor(_))
        ));
    }

    #[test]
    fn path_kind_round_trips_through_names() {
        for kind in PathKind::ALL {
            assert_eq!(kind.name().parse::<PathKind>().unwrap(), kind);
        }
        assert!("straight".parse::<PathKind>().is_err());
    }
}
