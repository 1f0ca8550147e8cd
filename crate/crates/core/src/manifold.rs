//! The statistical manifold of multivariate normals under the Fisher metric.
//!
//! Points are `(μ, Σ)` pairs; tangent vectors are `(u_μ, u_Σ)` pairs with a
//! symmetric covariance part. Geodesics are always evaluated from the origin
//! `(0, I)`; arbitrary start points are handled by the affine normalization
//! in [`normalize_to_origin`], which preserves Fisher lengths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GeoError, Result};
use crate::linalg::{
    expm, gsq_fn, orthogonality_defect, spectral_fn, symmetric_part, symmetry_defect, SymFn,
    SymMatrix,
};

/// Absolute tolerance (scaled by the largest entry) for accepting a matrix as symmetric.
const SYMMETRY_TOL: f64 = 1e-12;

/// Orthogonality tolerance for user-supplied rotations.
const ORTHOGONALITY_TOL: f64 = 1e-10;

/// A multivariate normal `N(μ, Σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PointJson", into = "PointJson")]
pub struct GaussianPoint {
    mu: DVector<f64>,
    sigma: SymMatrix,
}

impl GaussianPoint {
    /// Validates dimensions and positive definiteness of `sigma`.
    pub fn new(mu: DVector<f64>, sigma: SymMatrix) -> Result<Self> {
        check_dim(sigma.dim(), mu.len())?;
        if mu.is_empty() {
            return Err(GeoError::InvalidInput("dimension must be positive".into()));
        }
        if !mu.iter().all(|v| v.is_finite()) || !sigma.is_finite() {
            return Err(GeoError::InvalidInput("non-finite entries".into()));
        }
        sigma.check_positive_definite()?;
        Ok(GaussianPoint { mu, sigma })
    }

    /// Builds a point whose covariance is already known to be positive
    /// definite (for example, the inverse of a Cholesky-factorized precision).
    pub(crate) fn from_trusted(mu: DVector<f64>, sigma: SymMatrix) -> Self {
        debug_assert_eq!(mu.len(), sigma.dim());
        GaussianPoint { mu, sigma }
    }

    /// Convenience constructor from a mean slice and a row-major covariance.
    pub fn from_slices(mu: &[f64], sigma_rows: &[f64]) -> Result<Self> {
        let d = mu.len();
        check_dim(d * d, sigma_rows.len())?;
        let raw = DMatrix::from_row_slice(d, d, sigma_rows);
        check_symmetric(&raw)?;
        GaussianPoint::new(DVector::from_column_slice(mu), SymMatrix::new(raw))
    }

    /// The origin `(0, I)`.
    pub fn origin(dim: usize) -> Self {
        GaussianPoint {
            mu: DVector::zeros(dim),
            sigma: SymMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    /// `Σ⁻¹`.
    pub fn precision(&self) -> Result<SymMatrix> {
        self.sigma.pd_inverse()
    }

    /// Canonical coordinates `(Σ⁻¹μ, Σ⁻¹)`.
    pub fn to_canonical(&self) -> Result<CanonicalPoint> {
        let precision = self.precision()?;
        let delta = precision.matrix() * &self.mu;
        Ok(CanonicalPoint { delta, precision })
    }

    /// Image under the affine map `x ↦ P x + r`, i.e. `(Pμ + r, PΣPᵀ)`.
    pub fn affine_transform(&self, p: &DMatrix<f64>, r: &DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), p.nrows())?;
        check_dim(self.dim(), p.ncols())?;
        check_dim(self.dim(), r.len())?;
        GaussianPoint::new(p * &self.mu + r, self.sigma.congruence(p))
    }
}

/// Canonical (natural-parameter) coordinates `δ = Σ⁻¹μ`, `Δ = Σ⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPoint {
    pub delta: DVector<f64>,
    pub precision: SymMatrix,
}

impl CanonicalPoint {
    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    /// Back to `(μ, Σ)`; fails if `Δ` is not positive definite.
    pub fn to_gaussian(&self) -> Result<GaussianPoint> {
        if !self.precision.is_finite() || !self.delta.iter().all(|v| v.is_finite()) {
            return Err(GeoError::NumericalOverflow(
                "non-finite canonical coordinates".into(),
            ));
        }
        let sigma = self.precision.pd_inverse()?;
        let mu = sigma.matrix() * &self.delta;
        Ok(GaussianPoint::from_trusted(mu, sigma))
    }
}

/// A tangent vector `(u_μ, u_Σ)`; at the origin it doubles as the initial
/// velocity `(x, B)` of a geodesic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TangentJson", into = "TangentJson")]
pub struct TangentVector {
    pub u_mu: DVector<f64>,
    pub u_sigma: SymMatrix,
}

impl TangentVector {
    pub fn new(u_mu: DVector<f64>, u_sigma: SymMatrix) -> Result<Self> {
        check_dim(u_sigma.dim(), u_mu.len())?;
        Ok(TangentVector { u_mu, u_sigma })
    }

    pub fn zeros(dim: usize) -> Self {
        TangentVector {
            u_mu: DVector::zeros(dim),
            u_sigma: SymMatrix::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.u_mu.len()
    }

    pub fn scale(&self, s: f64) -> Self {
        TangentVector {
            u_mu: &self.u_mu * s,
            u_sigma: self.u_sigma.scale(s),
        }
    }

    pub fn add(&self, other: &TangentVector) -> Self {
        TangentVector {
            u_mu: &self.u_mu + &other.u_mu,
            u_sigma: &self.u_sigma + &other.u_sigma,
        }
    }

    pub fn sub(&self, other: &TangentVector) -> Self {
        TangentVector {
            u_mu: &self.u_mu - &other.u_mu,
            u_sigma: &self.u_sigma - &other.u_sigma,
        }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &TangentVector) -> Self {
        TangentVector {
            u_mu: &self.u_mu + &other.u_mu * s,
            u_sigma: &self.u_sigma + &other.u_sigma.scale(s),
        }
    }

    /// Norm under the metric at the origin, `sqrt(uᵀu + ½‖U‖²_F)`.
    pub fn origin_norm(&self) -> f64 {
        origin_inner(self, self).max(0.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.u_mu.iter().all(|v| v.is_finite()) && self.u_sigma.is_finite()
    }
}

/// Inner product at the origin.
pub fn origin_inner(u: &TangentVector, v: &TangentVector) -> f64 {
    u.u_mu.dot(&v.u_mu) + 0.5 * u.u_sigma.matrix().dot(v.u_sigma.matrix())
}

/// Fisher metric inner product `u_μᵀΣ⁻¹v_μ + ½tr(Σ⁻¹u_ΣΣ⁻¹v_Σ)` at `at`.
pub fn inner_product(u: &TangentVector, v: &TangentVector, at: &GaussianPoint) -> Result<f64> {
    check_dim(at.dim(), u.dim())?;
    check_dim(at.dim(), v.dim())?;
    let precision = at.precision()?;
    Ok(inner_with_precision(u, v, &precision))
}

pub(crate) fn inner_with_precision(
    u: &TangentVector,
    v: &TangentVector,
    precision: &SymMatrix,
) -> f64 {
    let p = precision.matrix();
    let mean_part = u.u_mu.dot(&(p * &v.u_mu));
    let pu = p * u.u_sigma.matrix();
    let pv = p * v.u_sigma.matrix();
    // tr(XY) = Σ_ij X_ij Y_ji
    let trace = pu.component_mul(&pv.transpose()).sum();
    mean_part + 0.5 * trace
}

/// Squared Fisher line element `dμᵀΣ⁻¹dμ + ½tr((Σ⁻¹dΣ)²)`.
pub fn metric_sq(at: &GaussianPoint, d: &TangentVector) -> Result<f64> {
    Ok(inner_product(d, d, at)?.max(0.0))
}

/// Symmetrized Kullback–Leibler divergence `½(KL(a‖b) + KL(b‖a))`.
pub fn sym_kl(a: &GaussianPoint, b: &GaussianPoint) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let pa = a.precision()?;
    let pb = b.precision()?;
    let dp = pb.matrix() - pa.matrix();
    let ds = a.sigma.matrix() - b.sigma.matrix();
    let trace = dp.component_mul(&ds.transpose()).sum();
    let dmu = b.mu() - a.mu();
    let quad = dmu.dot(&((pa.matrix() + pb.matrix()) * &dmu));
    Ok((0.25 * (trace + quad)).max(0.0))
}

/// Kullback–Leibler divergence `KL(a‖b)`.
pub fn kl(a: &GaussianPoint, b: &GaussianPoint) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let chol = b.sigma.matrix().clone().cholesky().ok_or_else(|| {
        let s = b.sigma.spectrum();
        GeoError::NotPositiveDefinite {
            min: s.min(),
            max: s.max(),
        }
    })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or(GeoError::NotPositiveDefinite { min: 0.0, max: 0.0 })?;
    // eigenvalues of Σ_b^{-1/2} Σ_a Σ_b^{-1/2}, via the Cholesky factor
    let whitened = a.sigma.congruence(&l_inv);
    let spec = whitened.spectrum();
    let spectral: f64 = spec
        .values
        .iter()
        .map(|&lam| {
            let u = lam - 1.0;
            u - u.ln_1p()
        })
        .sum();
    let dmu = b.mu() - a.mu();
    let z = &l_inv * dmu;
    Ok((0.5 * (spectral + z.norm_squared())).max(0.0))
}

/// An endpoint pair mapped so that the source sits at the origin.
#[derive(Debug, Clone)]
pub struct OriginProblem {
    /// Image of the destination; the origin is the image of the source.
    pub target: GaussianPoint,
    /// `P = Σ₀^{1/2} R`.
    pub whitener: DMatrix<f64>,
    /// `P⁻¹ = Rᵀ Σ₀^{-1/2}`.
    pub whitener_inv: DMatrix<f64>,
    pub source: GaussianPoint,
    pub destination: GaussianPoint,
}

impl OriginProblem {
    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Maps a point from the normalized frame back to the original frame.
    pub fn denormalize_point(&self, p: &GaussianPoint) -> Result<GaussianPoint> {
        p.affine_transform(&self.whitener, self.source.mu())
    }

    /// Maps a point from the original frame into the normalized frame.
    pub fn normalize_point(&self, p: &GaussianPoint) -> Result<GaussianPoint> {
        let shifted = p.mu() - self.source.mu();
        GaussianPoint::new(
            &self.whitener_inv * shifted,
            p.sigma().congruence(&self.whitener_inv),
        )
    }

    /// Maps a tangent vector at a normalized-frame point to the original frame.
    pub fn denormalize_velocity(&self, v: &TangentVector) -> TangentVector {
        TangentVector {
            u_mu: &self.whitener * &v.u_mu,
            u_sigma: v.u_sigma.congruence(&self.whitener),
        }
    }

    /// Inverse of [`OriginProblem::denormalize_velocity`].
    pub fn normalize_velocity(&self, v: &TangentVector) -> TangentVector {
        TangentVector {
            u_mu: &self.whitener_inv * &v.u_mu,
            u_sigma: v.u_sigma.congruence(&self.whitener_inv),
        }
    }
}

/// Normalizes `(a, b)` so that `a` maps to `(0, I)` using `P = Σ_a^{1/2} R`.
pub fn normalize_to_origin(
    a: &GaussianPoint,
    b: &GaussianPoint,
    rotation: &DMatrix<f64>,
) -> Result<OriginProblem> {
    check_dim(a.dim(), b.dim())?;
    check_dim(a.dim(), rotation.nrows())?;
    check_dim(a.dim(), rotation.ncols())?;
    let defect = orthogonality_defect(rotation);
    if !(defect <= ORTHOGONALITY_TOL) {
        return Err(GeoError::NotOrthogonal(defect));
    }
    let spec = a.sigma.spectrum();
    let root = spectral_fn(&spec, SymFn::Sqrt)?;
    let inv_root = spectral_fn(&spec, SymFn::InvSqrt)?;
    let whitener = root.matrix() * rotation;
    let whitener_inv = rotation.transpose() * inv_root.matrix();
    let mu_t = &whitener_inv * (b.mu() - a.mu());
    let sigma_t = b.sigma.congruence(&whitener_inv);
    let target = GaussianPoint::new(mu_t, sigma_t)?;
    Ok(OriginProblem {
        target,
        whitener,
        whitener_inv,
        source: a.clone(),
        destination: b.clone(),
    })
}

/// [`normalize_to_origin`] with `R = I`.
pub fn normalize_default(a: &GaussianPoint, b: &GaussianPoint) -> Result<OriginProblem> {
    normalize_to_origin(a, b, &DMatrix::identity(a.dim(), a.dim()))
}

/// Maps a normalized-frame velocity back to the original frame.
pub fn denormalize_velocity(v: &TangentVector, prob: &OriginProblem) -> Result<TangentVector> {
    check_dim(prob.dim(), v.dim())?;
    Ok(prob.denormalize_velocity(v))
}

/// How to evaluate a geodesic from the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeodesicMethod {
    /// Exponential of the `(2d+1)`-dimensional augmented generator.
    #[default]
    MatrixExp,
    /// Even-power closed form in `G² = B² + 2xxᵀ`.
    ClosedForm,
}

/// The augmented generator `[[-B, x, 0], [xᵀ, 0, -xᵀ], [0, -x, B]]`.
pub fn augmented_generator(v: &TangentVector) -> DMatrix<f64> {
    let d = v.dim();
    let b = v.u_sigma.matrix();
    let x = &v.u_mu;
    let mut m = DMatrix::zeros(2 * d + 1, 2 * d + 1);
    m.view_mut((0, 0), (d, d)).copy_from(&(-b));
    m.view_mut((d + 1, d + 1), (d, d)).copy_from(b);
    for i in 0..d {
        m[(i, d)] = x[i];
        m[(d, i)] = x[i];
        m[(d, d + 1 + i)] = -x[i];
        m[(d + 1 + i, d)] = -x[i];
    }
    m
}

/// Reads canonical coordinates out of the exponential of the augmented generator.
pub(crate) fn canonical_from_augmented(e: &DMatrix<f64>, d: usize) -> CanonicalPoint {
    let precision = SymMatrix::new(e.view((0, 0), (d, d)).into_owned());
    let delta = e.view((0, d), (d, 1)).column(0).into_owned();
    CanonicalPoint { delta, precision }
}

/// Canonical coordinates of the geodesic from the origin with initial velocity `v`, at time `t`.
pub fn geodesic_canonical(
    v: &TangentVector,
    t: f64,
    method: GeodesicMethod,
) -> Result<CanonicalPoint> {
    if !v.is_finite() || !t.is_finite() {
        return Err(GeoError::InvalidInput("non-finite velocity or time".into()));
    }
    let d = v.dim();
    match method {
        GeodesicMethod::MatrixExp => {
            let e = expm(&(augmented_generator(v) * t))?;
            Ok(canonical_from_augmented(&e, d))
        }
        GeodesicMethod::ClosedForm => {
            let b = v.u_sigma.matrix();
            let x = &v.u_mu;
            let gsq = SymMatrix::new(b * b + (x * x.transpose()) * 2.0);
            let f = gsq_fn(&gsq, t)?;
            let ch = f.cosh.matrix();
            let sh = f.sinh_over_g.matrix();
            let cm = f.cosh_m1_over_gsq.matrix();
            let id = DMatrix::<f64>::identity(d, d);
            let delta = -(b * (cm * x)) + sh * x;
            let precision = (&id + ch) * 0.5 + (b * cm * b) * 0.5 - (sh * b) * 0.5 - (b * sh) * 0.5;
            Ok(CanonicalPoint {
                delta,
                precision: SymMatrix::new(precision),
            })
        }
    }
}

/// The point at time `t` on the geodesic from `(0, I)` with initial velocity `v`.
pub fn geodesic_from_origin(
    v: &TangentVector,
    t: f64,
    method: GeodesicMethod,
) -> Result<GaussianPoint> {
    if t == 0.0 {
        return Ok(GaussianPoint::origin(v.dim()));
    }
    geodesic_canonical(v, t, method)?.to_gaussian()
}

/// Velocity of the geodesic with origin velocity `v = (x, B)` when it passes
/// through `p`: `(Σx, Σ(B − xμᵀ))`.
pub fn geodesic_velocity_at(v: &TangentVector, p: &GaussianPoint) -> TangentVector {
    let s = p.sigma.matrix();
    let dmu = s * &v.u_mu;
    let dsig = s * (v.u_sigma.matrix() - &v.u_mu * p.mu.transpose());
    TangentVector {
        u_mu: dmu,
        u_sigma: SymMatrix::new(dsig),
    }
}

/// Largest entrywise defect between a central finite difference of the
/// geodesic at `t` and the first-order geodesic equations.
pub fn geodesic_ode_residual(v: &TangentVector, t: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(GeoError::InvalidInput(
            "finite-difference step must be positive".into(),
        ));
    }
    let method = GeodesicMethod::MatrixExp;
    let plus = geodesic_from_origin(v, t + h, method)?;
    let minus = geodesic_from_origin(v, t - h, method)?;
    let mid = geodesic_from_origin(v, t, method)?;
    let fd_mu = (plus.mu() - minus.mu()) / (2.0 * h);
    let fd_sigma = (plus.sigma.matrix() - minus.sigma.matrix()) / (2.0 * h);
    let exact = geodesic_velocity_at(v, &mid);
    let a = (fd_mu - &exact.u_mu).amax();
    let b = (fd_sigma - exact.u_sigma.matrix()).amax();
    Ok(a.max(b))
}

/// Fisher–Rao length of the geodesic with origin velocity `v` over unit time.
pub fn fisher_rao_from_velocity(v: &TangentVector) -> f64 {
    v.origin_norm()
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let defect = symmetry_defect(m);
    let scale = m.amax().max(1.0);
    if !(defect <= SYMMETRY_TOL * scale) {
        return Err(GeoError::InvalidInput(format!(
            "sigma: matrix is not symmetric (defect {defect:e})"
        )));
    }
    Ok(())
}

fn rows_to_matrix(field: &str, d: usize, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.len() != d {
        return Err(GeoError::InvalidInput(format!(
            "{field}: expected {d} rows, found {}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(GeoError::InvalidInput(format!(
                "{field}: row {i} has {} entries, expected {d}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(d, d, |r, c| rows[r][c]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize, Deserialize)]
struct PointJson {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

impl TryFrom<PointJson> for GaussianPoint {
    type Error = GeoError;
    fn try_from(p: PointJson) -> Result<Self> {
        let d = p.mu.len();
        if d == 0 {
            return Err(GeoError::InvalidInput("mu: must be non-empty".into()));
        }
        let raw = rows_to_matrix("sigma", d, &p.sigma)?;
        check_symmetric(&raw)?;
        GaussianPoint::new(DVector::from_vec(p.mu), SymMatrix::new(raw))
    }
}

impl From<GaussianPoint> for PointJson {
    fn from(p: GaussianPoint) -> Self {
        PointJson {
            mu: p.mu.iter().copied().collect(),
            sigma: matrix_to_rows(p.sigma.matrix()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TangentJson {
    u_mu: Vec<f64>,
    u_sigma: Vec<Vec<f64>>,
}

impl TryFrom<TangentJson> for TangentVector {
    type Error = GeoError;
    fn try_from(v: TangentJson) -> Result<Self> {
        let d = v.u_mu.len();
        let raw = rows_to_matrix("u_sigma", d, &v.u_sigma)?;
        if symmetry_defect(&raw) > SYMMETRY_TOL * raw.amax().max(1.0) {
            return Err(GeoError::InvalidInput(
                "u_sigma: matrix is not symmetric".into(),
            ));
        }
        Ok(TangentVector {
            u_mu: DVector::from_vec(v.u_mu),
            u_sigma: SymMatrix::new(raw),
        })
    }
}

impl From<TangentVector> for TangentJson {
    fn from(v: TangentVector) -> Self {
        TangentJson {
            u_mu: v.u_mu.iter().copied().collect(),
            u_sigma: matrix_to_rows(v.u_sigma.matrix()),
        }
    }
}

/// Symmetric part of a square matrix as a tangent covariance component.
pub fn sym(m: &DMatrix<f64>) -> SymMatrix {
    SymMatrix::new(symmetric_part(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_orthogonal, rel_frobenius};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(i: usize, d: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    fn random_point(d: usize, rng: &mut ChaCha8Rng) -> GaussianPoint {
        let q = random_orthogonal(d, rng).unwrap();
        let eig: Vec<f64> = (0..d)
            .map(|_| rng.random_range(-1.5..1.5f64).exp())
            .collect();
        let mu = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        GaussianPoint::new(mu, SymMatrix::from_diagonal(&eig).congruence(&q)).unwrap()
    }

    fn random_velocity(d: usize, norm: f64, rng: &mut ChaCha8Rng) -> TangentVector {
        let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let b = SymMatrix::new(DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)));
        let v = TangentVector::new(x, b).unwrap();
        v.scale(norm / v.origin_norm())
    }

    #[test]
    fn metric_examples() {
        let o3 = GaussianPoint::origin(3);
        let v = TangentVector::new(e(0, 3), SymMatrix::zeros(3)).unwrap();
        assert!((metric_sq(&o3, &v).unwrap() - 1.0).abs() < 1e-15);
        let p = GaussianPoint::new(DVector::zeros(2), SymMatrix::identity(2).scale(2.0)).unwrap();
        let v2 = TangentVector::new(e(0, 2), SymMatrix::zeros(2)).unwrap();
        assert!((metric_sq(&p, &v2).unwrap() - 0.5).abs() < 1e-15);
        let w = TangentVector::new(DVector::zeros(3), SymMatrix::identity(3)).unwrap();
        assert!((metric_sq(&o3, &w).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn inner_product_orthogonality() {
        let o = GaussianPoint::origin(2);
        let u = TangentVector::new(e(0, 2), SymMatrix::zeros(2)).unwrap();
        let v = TangentVector::new(e(1, 2), SymMatrix::zeros(2)).unwrap();
        assert_eq!(inner_product(&u, &v, &o).unwrap(), 0.0);
        let a =
            TangentVector::new(DVector::zeros(2), SymMatrix::from_diagonal(&[1.0, 0.0])).unwrap();
        let b =
            TangentVector::new(DVector::zeros(2), SymMatrix::from_diagonal(&[0.0, 1.0])).unwrap();
        assert_eq!(inner_product(&a, &b, &o).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_symmetric_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_point(3, &mut rng);
        let u = random_velocity(3, 1.0, &mut rng);
        let v = random_velocity(3, 2.0, &mut rng);
        let uv = inner_product(&u, &v, &p).unwrap();
        let vu = inner_product(&v, &u, &p).unwrap();
        assert!((uv - vu).abs() < 1e-12 * uv.abs().max(1.0));
        assert!((inner_product(&u, &u, &p).unwrap() - metric_sq(&p, &u).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn divergence_examples() {
        let a = GaussianPoint::from_slices(&[0.0], &[1.0]).unwrap();
        let b = GaussianPoint::from_slices(&[1.0], &[1.0]).unwrap();
        let c = GaussianPoint::from_slices(&[0.0], &[2.0]).unwrap();
        assert_eq!(sym_kl(&a, &a).unwrap(), 0.0);
        assert!((sym_kl(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert!((sym_kl(&a, &c).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(kl(&a, &a).unwrap(), 0.0);
        assert!((kl(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sym_kl_is_mean_of_kls() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in [1, 2, 4] {
            let a = random_point(d, &mut rng);
            let b = random_point(d, &mut rng);
            let s = sym_kl(&a, &b).unwrap();
            let m = 0.5 * (kl(&a, &b).unwrap() + kl(&b, &a).unwrap());
            assert!((s - m).abs() < 1e-10 * s.max(1.0));
            assert!((s - sym_kl(&b, &a).unwrap()).abs() < 1e-12 * s.max(1.0));
        }
    }

    #[test]
    fn normalization_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_point(3, &mut rng);
        let id = DMatrix::identity(3, 3);
        let same = normalize_to_origin(&a, &a, &id).unwrap();
        assert!(same.target.mu().amax() < 1e-12);
        assert!((same.target.sigma().matrix() - &id).amax() < 1e-12);

        let b = random_point(3, &mut rng);
        let from_origin = normalize_to_origin(&GaussianPoint::origin(3), &b, &id).unwrap();
        assert!((from_origin.target.mu() - b.mu()).amax() < 1e-14);
        assert!(rel_frobenius(b.sigma().matrix(), from_origin.target.sigma().matrix()) < 1e-14);

        let r = random_orthogonal(3, &mut rng).unwrap();
        let prob = normalize_to_origin(&a, &b, &r).unwrap();
        let back = prob.denormalize_point(&prob.target).unwrap();
        assert!((back.mu() - b.mu()).norm() < 1e-10 * b.mu().norm());
        assert!(rel_frobenius(b.sigma().matrix(), back.sigma().matrix()) < 1e-10);
        let src = prob.denormalize_point(&GaussianPoint::origin(3)).unwrap();
        assert!((src.mu() - a.mu()).norm() < 1e-12);
        assert!(rel_frobenius(a.sigma().matrix(), src.sigma().matrix()) < 1e-10);

        let bad = DMatrix::from_diagonal_element(3, 3, 2.0);
        assert!(matches!(
            normalize_to_origin(&a, &b, &bad),
            Err(GeoError::NotOrthogonal(_))
        ));
    }

    #[test]
    fn denormalization_preserves_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_point(3, &mut rng);
        let b = random_point(3, &mut rng);
        let r = random_orthogonal(3, &mut rng).unwrap();
        let prob = normalize_to_origin(&a, &b, &r).unwrap();
        let v = random_velocity(3, 1.7, &mut rng);
        let out = denormalize_velocity(&v, &prob).unwrap();
        let l_out = inner_product(&out, &out, &a).unwrap();
        let l_in = origin_inner(&v, &v);
        assert!((l_out - l_in).abs() < 1e-9 * l_in);
        let zero = denormalize_velocity(&TangentVector::zeros(3), &prob).unwrap();
        assert_eq!(zero, TangentVector::zeros(3));
        let trivial = normalize_default(&GaussianPoint::origin(3), &b).unwrap();
        assert_eq!(denormalize_velocity(&v, &trivial).unwrap(), v);
    }

    #[test]
    fn geodesic_examples() {
        let zero = TangentVector::zeros(2);
        for m in [GeodesicMethod::MatrixExp, GeodesicMethod::ClosedForm] {
            let p = geodesic_from_origin(&zero, 0.8, m).unwrap();
            assert!(p.mu().amax() < 1e-15);
            assert!((p.sigma().matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
            let v = TangentVector::new(DVector::zeros(2), SymMatrix::from_diagonal(&[2.0, -2.0]))
                .unwrap();
            let q = geodesic_from_origin(&v, 1.0, m).unwrap();
            let want = SymMatrix::from_diagonal(&[2f64.exp(), (-2f64).exp()]);
            assert!(rel_frobenius(want.matrix(), q.sigma().matrix()) < 1e-13);
            assert!(q.mu().amax() < 1e-14);
        }
    }

    #[test]
    fn dual_formulas_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [1, 2, 3, 5] {
            for _ in 0..10 {
                let v = random_velocity(d, rng.random_range(0.1..6.0), &mut rng);
                let a = geodesic_canonical(&v, 0.7, GeodesicMethod::MatrixExp).unwrap();
                let b = geodesic_canonical(&v, 0.7, GeodesicMethod::ClosedForm).unwrap();
                assert!(rel_frobenius(a.precision.matrix(), b.precision.matrix()) < 1e-10);
                assert!((&a.delta - &b.delta).norm() <= 1e-10 * a.delta.norm().max(1.0));
            }
        }
    }

    #[test]
    fn canonical_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_point(4, &mut rng);
        let c = p.to_canonical().unwrap();
        let back = c.to_gaussian().unwrap();
        assert!((back.mu() - p.mu()).norm() < 1e-10 * p.mu().norm());
        assert!(rel_frobenius(p.sigma().matrix(), back.sigma().matrix()) < 1e-10);
    }

    #[test]
    fn ode_residual_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            geodesic_ode_residual(&TangentVector::zeros(2), 0.5, 1e-5).unwrap(),
            0.0
        );
        let eq =
            TangentVector::new(DVector::zeros(2), SymMatrix::from_diagonal(&[0.5, -1.0])).unwrap();
        assert!(geodesic_ode_residual(&eq, 0.5, 1e-5).unwrap() < 1e-6);
        for _ in 0..5 {
            let v = random_velocity(3, 3.0, &mut rng);
            assert!(geodesic_ode_residual(&v, 0.4, 1e-5).unwrap() < 1e-5);
        }
    }

    #[test]
    fn fisher_rao_examples() {
        let v = TangentVector::new(e(0, 2), SymMatrix::zeros(2)).unwrap();
        assert!((fisher_rao_from_velocity(&v) - 1.0).abs() < 1e-15);
        let w =
            TangentVector::new(DVector::zeros(2), SymMatrix::from_diagonal(&[2.0, -2.0])).unwrap();
        assert!((fisher_rao_from_velocity(&w) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_point(3, &mut rng);
        let s = serde_json::to_string(&p).unwrap();
        let q: GaussianPoint = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let bad = r#"{"mu":[0,0],"sigma":[[1,0.5],[0.4,1]]}"#;
        let err = serde_json::from_str::<GaussianPoint>(bad)
            .unwrap_err()
            .to_string();
        assert!(err.contains("sigma"), "{err}");
        let ragged = r#"{"mu":[0,0],"sigma":[[1,0],[0]]}"#;
        assert!(serde_json::from_str::<GaussianPoint>(ragged)
            .unwrap_err()
            .to_string()
            .contains("row 1"));
        let npd = r#"{"mu":[0,0],"sigma":[[1,2],[2,1]]}"#;
        assert!(serde_json::from_str::<GaussianPoint>(npd).is_err());
        let v = random_velocity(2, 1.0, &mut rng);
        let vs = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<TangentVector>(&vs).unwrap(), v);
    }

    #[test]
    fn invalid_points_rejected() {
        assert!(GaussianPoint::from_slices(&[0.0, 0.0], &[1.0, 0.0, 0.0, -1.0]).is_err());
        assert!(matches!(
            GaussianPoint::new(DVector::zeros(3), SymMatrix::identity(2)),
            Err(GeoError::DimensionMismatch { .. })
        ));
    }
}
