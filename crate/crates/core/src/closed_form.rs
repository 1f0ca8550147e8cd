//! Exact geodesics for targets whose precision-weighted mean lies in an
//! eigenspace of the target covariance.
//!
//! After rotating the normalized target so that `Σ_t = D` is diagonal and
//! `Σ_t⁻¹μ_t = δ_t e_k`, the geodesic equations decouple axis by axis. Each
//! axis `j` with precision `Δ_j = 1/D_jj` and mean weight `δ_j` has the
//! constants
//!
//! ```text
//! α = δ² − 2Δ² + 2Δ,   γ = sqrt(α² + 8δ²Δ²),   g = acosh(1 + γ²/(8Δ³)),
//! ```
//!
//! giving `B_jj = (α/γ) g` and `x_j = 2gδΔ/γ`. On axes with `δ_j = 0` this
//! reduces to `B_jj = log D_jj`, which is evaluated directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::linalg::{basis_with_leading, spectral_fn, SymFn, SymMatrix, CLUSTER_REL_GAP};
use crate::manifold::{fisher_rao_from_velocity, GaussianPoint, TangentVector};

/// Default tolerance (radians) for the eigenspace-alignment test.
pub const DEFAULT_ANGLE_TOL: f64 = 1e-9;

/// Below this norm the precision-weighted mean is treated as zero.
const ZERO_MEAN_TOL: f64 = 1e-14;

/// The most specific closed-form case a normalized target belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Univariate,
    EqualMeans,
    EqualVariances,
    AxisAligned,
    General,
}

impl CaseKind {
    pub fn is_special(self) -> bool {
        self != CaseKind::General
    }
}

/// Result of [`classify`].
#[derive(Debug, Clone)]
pub struct CaseClassification {
    pub kind: CaseKind,
    /// Index of the axis carrying the mean, after rotation by `rotation`.
    pub axis: Option<usize>,
    /// Orthonormal `R` with `RᵀΣ_tR` diagonal and `RᵀΣ_t⁻¹μ_t = δ_t e_k`.
    pub rotation: DMatrix<f64>,
    /// `δ_t = ‖Σ_t⁻¹μ_t‖ ≥ 0`.
    pub aligned_delta: f64,
}

/// Per-axis constants of the decoupled solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisConstants {
    pub delta: f64,
    pub big_delta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub g: f64,
}

impl AxisConstants {
    /// Constants for mean weight `delta` and precision `big_delta` on one axis.
    pub fn new(delta: f64, big_delta: f64) -> Self {
        let alpha = delta * delta - 2.0 * big_delta * big_delta + 2.0 * big_delta;
        let gamma = (alpha * alpha + 8.0 * delta * delta * big_delta * big_delta).sqrt();
        let z = gamma * gamma / (8.0 * big_delta.powi(3));
        AxisConstants {
            delta,
            big_delta,
            alpha,
            gamma,
            g: acosh1p(z),
        }
    }

    /// Diagonal entry of `B` on this axis.
    pub fn b(&self) -> f64 {
        if self.gamma == 0.0 {
            0.0
        } else {
            self.alpha / self.gamma * self.g
        }
    }

    /// Component of `x` on this axis.
    pub fn x(&self) -> f64 {
        if self.gamma == 0.0 {
            0.0
        } else {
            2.0 * self.g * self.delta * self.big_delta / self.gamma
        }
    }
}

/// `acosh(1 + z)` for `z ≥ 0`, accurate for small `z`.
pub fn acosh1p(z: f64) -> f64 {
    let z = z.max(0.0);
    (z + (z * (z + 2.0)).sqrt()).ln_1p()
}

/// Exact solution for a special-case target.
#[derive(Debug, Clone)]
pub struct SpecialCaseSolution {
    pub kind: CaseKind,
    /// Initial velocity `(x, B)` at the origin.
    pub velocity: TangentVector,
    pub distance: f64,
    /// Constants of the axis carrying the mean, in the rotated frame.
    pub constants: Option<AxisConstants>,
}

/// Classifies a normalized target `(μ_t, Σ_t)` by eigenspace alignment of `Σ_t⁻¹μ_t`.
pub fn classify(target: &GaussianPoint, angle_tol: f64) -> CaseClassification {
    let d = target.dim();
    let spec = target.sigma().spectrum();
    // precision-weighted mean, built from the spectrum already at hand
    let coeffs = spec.vectors.transpose() * target.mu();
    let weighted = DVector::from_fn(d, |i, _| coeffs[i] / spec.values[i]);
    let w = &spec.vectors * &weighted;
    let delta = w.norm();

    if delta <= ZERO_MEAN_TOL {
        let kind = if d == 1 {
            CaseKind::Univariate
        } else {
            CaseKind::EqualMeans
        };
        return CaseClassification {
            kind,
            axis: None,
            rotation: spec.vectors,
            aligned_delta: 0.0,
        };
    }

    for cluster in spec.clusters(CLUSTER_REL_GAP) {
        let basis = spec
            .vectors
            .columns(cluster.start, cluster.len())
            .into_owned();
        let proj = &basis * (basis.transpose() * &w);
        let off = (&w - &proj).norm();
        let angle = off.atan2(proj.norm());
        if angle > angle_tol {
            continue;
        }
        let mut rotation = spec.vectors.clone();
        let aligned = basis_with_leading(&proj, &basis);
        rotation
            .columns_mut(cluster.start, cluster.len())
            .copy_from(&aligned);
        let kind = if d == 1 {
            CaseKind::Univariate
        } else if cluster.len() == d
            && (spec
                .values
                .iter()
                .all(|l| (l - 1.0).abs() <= CLUSTER_REL_GAP))
        {
            CaseKind::EqualVariances
        } else {
            CaseKind::AxisAligned
        };
        return CaseClassification {
            kind,
            axis: Some(cluster.start),
            rotation,
            aligned_delta: delta,
        };
    }
    CaseClassification {
        kind: CaseKind::General,
        axis: None,
        rotation: spec.vectors,
        aligned_delta: delta,
    }
}

/// Exact geodesic velocity and distance for a special-case target.
pub fn solve_special(target: &GaussianPoint) -> Result<SpecialCaseSolution> {
    let class = classify(target, DEFAULT_ANGLE_TOL);
    solve_classified(target, &class)
}

/// As [`solve_special`], for an existing classification.
pub fn solve_classified(
    target: &GaussianPoint,
    class: &CaseClassification,
) -> Result<SpecialCaseSolution> {
    let d = target.dim();
    let r = &class.rotation;
    match (class.kind, class.axis) {
        (CaseKind::General, _) => Err(GeoError::NotSpecialCase),
        (_, None) => {
            // equal means: B = log Σ_t, x = 0
            let b = spectral_fn(&target.sigma().spectrum(), SymFn::Log)?;
            let velocity = TangentVector::new(DVector::zeros(d), b)?;
            let distance = fisher_rao_from_velocity(&velocity);
            Ok(SpecialCaseSolution {
                kind: class.kind,
                velocity,
                distance,
                constants: None,
            })
        }
        (kind, Some(k)) => {
            let rotated = target.sigma().congruence(&r.transpose());
            let diag: Vec<f64> = (0..d).map(|j| rotated.matrix()[(j, j)]).collect();
            let constants = AxisConstants::new(class.aligned_delta, 1.0 / diag[k]);
            let mut b_rot = vec![0.0; d];
            let mut sq = 0.0;
            for j in 0..d {
                if j == k {
                    b_rot[j] = constants.b();
                    sq += constants.g * constants.g;
                } else {
                    b_rot[j] = diag[j].ln();
                    sq += b_rot[j] * b_rot[j];
                }
            }
            let mut x_rot = DVector::zeros(d);
            x_rot[k] = constants.x();
            let velocity =
                TangentVector::new(r * x_rot, SymMatrix::from_diagonal(&b_rot).congruence(r))?;
            Ok(SpecialCaseSolution {
                kind,
                velocity,
                distance: (0.5 * sq).sqrt(),
                constants: Some(constants),
            })
        }
    }
}

/// Closed-form Fisher–Rao distance from the origin to a special-case target.
pub fn distance_special(target: &GaussianPoint) -> Result<f64> {
    Ok(solve_special(target)?.distance)
}

/// Closed-form velocity for `Σ_t = I`: `B = (g δ/√(δ²+8)) ûûᵀ`, `x = (2g/√(δ²+8)) û`
/// with `δ = ‖μ_t‖`, `û = μ_t/δ`, `g = acosh(1 + δ²(δ²+8)/8)`.
pub fn equal_variances_velocity(mu_t: &DVector<f64>) -> TangentVector {
    let d = mu_t.len();
    let delta = mu_t.norm();
    if delta == 0.0 {
        return TangentVector::zeros(d);
    }
    let u = mu_t / delta;
    let root = (delta * delta + 8.0).sqrt();
    let g = acosh1p(delta * delta * (delta * delta + 8.0) / 8.0);
    TangentVector {
        u_mu: &u * (2.0 * g / root),
        u_sigma: SymMatrix::outer(&u).scale(g * delta / root),
    }
}

/// Closed-form velocity for univariate targets `(μ, σ²)`.
pub fn univariate_velocity(mu: f64, var: f64) -> TangentVector {
    let c = AxisConstants::new((mu / var).abs(), 1.0 / var);
    let (x, b) = if mu == 0.0 {
        (0.0, var.ln())
    } else {
        (c.x() * mu.signum(), c.b())
    };
    TangentVector {
        u_mu: DVector::from_element(1, x),
        u_sigma: SymMatrix::from_diagonal(&[b]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthogonal;
    use crate::manifold::{geodesic_from_origin, sym_kl, GeodesicMethod};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classify_examples() {
        let t = GaussianPoint::from_slices(&[0.0, 0.0], &[2.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!(classify(&t, DEFAULT_ANGLE_TOL).kind, CaseKind::EqualMeans);
        let t = GaussianPoint::from_slices(&[0.3, -1.2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            classify(&t, DEFAULT_ANGLE_TOL).kind,
            CaseKind::EqualVariances
        );
        // eigenvalue 2 with multiplicity two spanning the plane containing (1,1,0)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q2 = random_orthogonal(2, &mut rng).unwrap();
        let mut basis = DMatrix::zeros(3, 3);
        basis.view_mut((0, 0), (2, 2)).copy_from(&q2);
        basis[(2, 2)] = 1.0;
        let sigma = SymMatrix::from_diagonal(&[2.0, 2.0, 0.5]).congruence(&basis);
        let t = GaussianPoint::new(DVector::from_vec(vec![1.0, 1.0, 0.0]), sigma).unwrap();
        let c = classify(&t, DEFAULT_ANGLE_TOL);
        assert_eq!(c.kind, CaseKind::AxisAligned);
        let sigma = SymMatrix::from_diagonal(&[2.0, 3.0, 0.5]).congruence(&basis);
        let t = GaussianPoint::new(DVector::from_vec(vec![1.0, 1.0, 0.0]), sigma).unwrap();
        assert_eq!(classify(&t, DEFAULT_ANGLE_TOL).kind, CaseKind::General);
    }

    #[test]
    fn equal_means_solution() {
        let sigma = SymMatrix::from_diagonal(&[2f64.exp(), (-2f64).exp()]);
        let t = GaussianPoint::new(DVector::zeros(2), sigma).unwrap();
        let s = solve_special(&t).unwrap();
        assert!(s.velocity.u_mu.amax() == 0.0);
        assert!(
            (s.velocity.u_sigma.matrix() - SymMatrix::from_diagonal(&[2.0, -2.0]).matrix()).amax()
                < 1e-14
        );
        assert!((s.distance - 2.0).abs() < 1e-14);
        assert_eq!(distance_special(&GaussianPoint::origin(3)).unwrap(), 0.0);
    }

    #[test]
    fn univariate_axis_formula_matches_log() {
        let c = AxisConstants::new(0.0, (-2f64).exp());
        assert!((c.b() - 2.0).abs() < 1e-14);
        assert!((c.g - 2.0).abs() < 1e-14);
        let t = GaussianPoint::from_slices(&[0.0], &[2f64.exp()]).unwrap();
        let s = solve_special(&t).unwrap();
        assert_eq!(s.kind, CaseKind::Univariate);
        assert!((s.velocity.u_sigma.matrix()[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn equal_variances_unit_mean() {
        let mu = DVector::from_vec(vec![0.6, 0.8]);
        let t = GaussianPoint::new(mu.clone(), SymMatrix::identity(2)).unwrap();
        let s = solve_special(&t).unwrap();
        let ln4 = 4f64.ln();
        let want_b = SymMatrix::outer(&mu).scale(ln4 / 3.0);
        assert!((s.velocity.u_sigma.matrix() - want_b.matrix()).amax() < 1e-14);
        assert!((&s.velocity.u_mu - &mu * (2.0 * ln4 / 3.0)).amax() < 1e-14);
        assert!((s.distance - ln4 / 2f64.sqrt()).abs() < 1e-14);
        assert!((s.distance - 0.980258).abs() < 1e-6);
        let row = equal_variances_velocity(&mu);
        assert!((row.u_sigma.matrix() - s.velocity.u_sigma.matrix()).amax() < 1e-14);
    }

    #[test]
    fn general_rejected() {
        let t = GaussianPoint::from_slices(&[1.0, 0.5], &[2.0, 0.3, 0.3, 1.0]).unwrap();
        assert!(matches!(solve_special(&t), Err(GeoError::NotSpecialCase)));
    }

    #[test]
    fn axis_aligned_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for d in [2, 3, 5] {
            let r = random_orthogonal(d, &mut rng).unwrap();
            let diag: Vec<f64> = (0..d).map(|j| (0.4 * j as f64 - 0.7).exp()).collect();
            let sigma = SymMatrix::from_diagonal(&diag).congruence(&r);
            let mu = sigma.matrix() * r.column(1) * -1.3;
            let t = GaussianPoint::new(mu, sigma).unwrap();
            let s = solve_special(&t).unwrap();
            assert_eq!(s.kind, CaseKind::AxisAligned);
            let end = geodesic_from_origin(&s.velocity, 1.0, GeodesicMethod::MatrixExp).unwrap();
            assert!(sym_kl(&end, &t).unwrap() < 1e-12);
            assert!(
                (fisher_rao_from_velocity(&s.velocity) - s.distance).abs() < 1e-12 * s.distance
            );
        }
    }

    #[test]
    fn univariate_row_matches_solver() {
        for &(m, v) in &[(1.0, 1.0), (-2.0, 0.3), (0.5, 4.0)] {
            let t = GaussianPoint::from_slices(&[m], &[v]).unwrap();
            let s = solve_special(&t).unwrap();
            let row = univariate_velocity(m, v);
            assert!((row.u_mu[0] - s.velocity.u_mu[0]).abs() < 1e-12);
            assert!(
                (row.u_sigma.matrix()[(0, 0)] - s.velocity.u_sigma.matrix()[(0, 0)]).abs() < 1e-12
            );
        }
    }
}
