//! Symmetric-matrix spectral toolkit and the matrix functions used by the
//! geodesic formulas.
//!
//! Every function of a symmetric matrix goes through a full eigendecomposition.
//! Dimensions here are small (a handful up to roughly twenty), so the spectral
//! route is both the simplest and the most accurate. The one non-symmetric
//! function, [`expm`], uses scaling and squaring around a Padé core.

use std::ops::{Add, Mul, Range, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{GeoError, Result};

/// Relative eigenvalue floor below which a matrix is not treated as positive definite.
pub const PD_REL_THRESHOLD: f64 = 1e-12;

/// Eigenvalues of a squared generator below this fraction of the largest are clamped to zero.
pub const GSQ_CLAMP_REL: f64 = 1e-14;

/// Eigenvalues of a squared generator below `-GSQ_NEG_REL * max` are rejected.
pub const GSQ_NEG_REL: f64 = 1e-10;

/// Default relative gap for grouping repeated eigenvalues into one eigenspace.
pub const CLUSTER_REL_GAP: f64 = 1e-8;

/// A dense symmetric matrix. Symmetrized as `(A + Aᵀ)/2` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a square matrix, replacing it by its symmetric part.
    ///
    /// Panics if `m` is not square.
    pub fn new(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SymMatrix requires a square matrix");
        SymMatrix(symmetric_part(&m))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds `v vᵀ`.
    pub fn outer(v: &DVector<f64>) -> Self {
        SymMatrix(v * v.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }

    /// `P S Pᵀ` for an arbitrary square `P`.
    pub fn congruence(&self, p: &DMatrix<f64>) -> Self {
        SymMatrix::new(p * &self.0 * p.transpose())
    }

    /// Eigendecomposition with eigenvalues in ascending order.
    pub fn spectrum(&self) -> Spectrum {
        Spectrum::of(self)
    }

    /// Inverse through a Cholesky factorization; fails if the matrix is not positive definite.
    pub fn pd_inverse(&self) -> Result<SymMatrix> {
        match self.0.clone().cholesky() {
            Some(ch) => Ok(SymMatrix::new(ch.inverse())),
            None => {
                let s = self.spectrum();
                Err(GeoError::NotPositiveDefinite {
                    min: s.min(),
                    max: s.max(),
                })
            }
        }
    }

    /// Checks the relative positive-definiteness threshold on the spectrum.
    pub fn check_positive_definite(&self) -> Result<Spectrum> {
        let s = self.spectrum();
        s.check_positive_definite()?;
        Ok(s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(s: SymMatrix) -> Self {
        s.0
    }
}

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - mᵀ`.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    (m - m.transpose()).amax()
}

/// Relative Frobenius distance `‖a - b‖ / max(‖a‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(f64::MIN_POSITIVE)
}

/// Symmetric eigendecomposition `S = V diag(λ) Vᵀ` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn of(s: &SymMatrix) -> Spectrum {
        let n = s.dim();
        if n == 1 {
            return Spectrum {
                values: DVector::from_element(1, s.0[(0, 0)]),
                vectors: DMatrix::identity(1, 1),
            };
        }
        let eig = SymmetricEigen::new(s.0.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (c, &i) in order.iter().enumerate() {
            vectors.set_column(c, &eig.eigenvectors.column(i));
        }
        Spectrum { values, vectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn check_positive_definite(&self) -> Result<()> {
        let (min, max) = (self.min(), self.max());
        if !(max > 0.0) || !(min > PD_REL_THRESHOLD * max) || !max.is_finite() {
            return Err(GeoError::NotPositiveDefinite { min, max });
        }
        Ok(())
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| {
            self.vectors[(r, c)] * f(self.values[c])
        });
        SymMatrix::new(scaled * self.vectors.transpose())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map(|l| l)
    }

    /// Index ranges of eigenvalues that belong to the same eigenspace, where
    /// neighbours closer than `rel_gap` (relative to their magnitude) are merged.
    pub fn clusters(&self, rel_gap: f64) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..self.dim() {
            let (a, b) = (self.values[i - 1], self.values[i]);
            if b - a > rel_gap * a.abs().max(b.abs()) {
                out.push(start..i);
                start = i;
            }
        }
        out.push(start..self.dim());
        out
    }
}

/// Spectral matrix functions available through [`sym_fn`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymFn {
    Sqrt,
    InvSqrt,
    Log,
    Exp,
}

/// Applies `kind` to a symmetric matrix through its spectrum.
pub fn sym_fn(s: &SymMatrix, kind: SymFn) -> Result<SymMatrix> {
    spectral_fn(&s.spectrum(), kind)
}

/// As [`sym_fn`], reusing an existing decomposition.
pub fn spectral_fn(spec: &Spectrum, kind: SymFn) -> Result<SymMatrix> {
    match kind {
        SymFn::Exp => Ok(spec.map(f64::exp)),
        SymFn::Sqrt => {
            spec.check_positive_definite()?;
            Ok(spec.map(f64::sqrt))
        }
        SymFn::InvSqrt => {
            spec.check_positive_definite()?;
            Ok(spec.map(|l| 1.0 / l.sqrt()))
        }
        SymFn::Log => {
            spec.check_positive_definite()?;
            Ok(spec.map(f64::ln))
        }
    }
}

// Padé coefficients and thresholds for scaling and squaring (Higham 2005).
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.53939833006323e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_low(a: &DMatrix<f64>, c: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let a2 = a * a;
    let mut power = DMatrix::identity(n, n);
    let mut u = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    for k in 0..c.len() / 2 {
        if k > 0 {
            power = &power * &a2;
        }
        v += &power * c[2 * k];
        u += &power * c[2 * k + 1];
    }
    (a * u, v)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

/// Matrix exponential of a general square matrix by scaling and squaring
/// with a degree 3–13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(GeoError::InvalidInput(
            "expm requires a square matrix".into(),
        ));
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(GeoError::NumericalOverflow(
            "non-finite expm argument".into(),
        ));
    }
    let norm = one_norm(a);
    let mut squarings = 0;
    let (u, v) = if norm <= THETA[0] {
        pade_low(a, &PADE3)
    } else if norm <= THETA[1] {
        pade_low(a, &PADE5)
    } else if norm <= THETA[2] {
        pade_low(a, &PADE7)
    } else if norm <= THETA[3] {
        pade_low(a, &PADE9)
    } else {
        squarings = (norm / THETA[4]).log2().ceil().max(0.0) as i32;
        let scaled = a * 2f64.powi(-squarings);
        pade13(&scaled)
    };
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .ok_or_else(|| GeoError::NumericalOverflow("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !r.iter().all(|v| v.is_finite()) {
        return Err(GeoError::NumericalOverflow(
            "matrix exponential overflowed".into(),
        ));
    }
    Ok(r)
}

/// Spectral functions of `G` evaluated from `G²` alone.
#[derive(Debug, Clone)]
pub struct GsqFunctions {
    /// `cosh(tG)`.
    pub cosh: SymMatrix,
    /// `sinh(tG) G⁻`, with eigenvalue `t` where `G` vanishes.
    pub sinh_over_g: SymMatrix,
    /// `(G⁻)²`, zero on the clamped null space.
    pub ginv_sq: SymMatrix,
    /// `(cosh(tG) - I)(G⁻)²` computed as `2 sinh²(tg/2)/g²`, with the
    /// `t²/2` limit where `G` vanishes.
    pub cosh_m1_over_gsq: SymMatrix,
}

/// Evaluates the even-power functions of `G` needed by the closed-form geodesic.
pub fn gsq_fn(gsq: &SymMatrix, t: f64) -> Result<GsqFunctions> {
    let spec = gsq.spectrum();
    let max = spec.max().max(0.0);
    if spec.min() < -GSQ_NEG_REL * max {
        return Err(GeoError::NegativeSpectrum {
            value: spec.min(),
            max,
        });
    }
    let clamp = |l: f64| if l <= GSQ_CLAMP_REL * max { 0.0 } else { l };
    let cosh = spec.map(|l| (t * clamp(l).sqrt()).cosh());
    let sinh_over_g = spec.map(|l| {
        let l = clamp(l);
        if l == 0.0 {
            t
        } else {
            let g = l.sqrt();
            (t * g).sinh() / g
        }
    });
    let ginv_sq = spec.map(|l| {
        let l = clamp(l);
        if l == 0.0 {
            0.0
        } else {
            1.0 / l
        }
    });
    let cosh_m1_over_gsq = spec.map(|l| {
        let l = clamp(l);
        if l == 0.0 {
            0.5 * t * t
        } else {
            let h = (0.5 * t * l.sqrt()).sinh();
            2.0 * h * h / l
        }
    });
    Ok(GsqFunctions {
        cosh,
        sinh_over_g,
        ginv_sq,
        cosh_m1_over_gsq,
    })
}

/// Random orthonormal matrix by Gram–Schmidt on standard-normal direction vectors.
///
/// Draws that are nearly linearly dependent on the columns built so far are
/// discarded and redrawn; after 100 such retries the draw fails.
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(GeoError::InvalidInput("dimension must be positive".into()));
    }
    let mut q = DMatrix::zeros(dim, dim);
    let mut retries = 0;
    let mut col = 0;
    while col < dim {
        let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm0 = v.norm();
        // two passes of classical Gram–Schmidt keep the columns orthogonal to rounding
        for _ in 0..2 {
            for j in 0..col {
                let c = q.column(j).dot(&v);
                v.axpy(-c, &q.column(j), 1.0);
            }
        }
        let nv = v.norm();
        if !(norm0 > 0.0 && nv > 1e-6 * norm0) {
            retries += 1;
            if retries > 100 {
                return Err(GeoError::DegenerateDraw(retries - 1));
            }
            continue;
        }
        q.set_column(col, &(v / nv));
        col += 1;
    }
    Ok(q)
}

/// Largest absolute entry of `QᵀQ - I`.
pub fn orthogonality_defect(q: &DMatrix<f64>) -> f64 {
    if !q.is_square() {
        return f64::INFINITY;
    }
    (q.transpose() * q - DMatrix::identity(q.nrows(), q.ncols())).amax()
}

/// Orthonormal basis whose first column is `lead` (normalized), completed from `basis`.
///
/// `basis` must span a space containing `lead`; the completion is taken from
/// its columns by Gram–Schmidt, dropping whichever column is most nearly
/// dependent.
pub fn basis_with_leading(lead: &DVector<f64>, basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let k = basis.ncols();
    let mut out = DMatrix::zeros(n, k);
    out.set_column(0, &lead.normalize());
    let mut filled = 1;
    let mut candidates: Vec<DVector<f64>> = (0..k).map(|j| basis.column(j).into_owned()).collect();
    while filled < k {
        // pick the candidate with the largest residual after projection
        let mut best: Option<(usize, DVector<f64>, f64)> = None;
        for (idx, c) in candidates.iter().enumerate() {
            let mut v = c.clone();
            for _ in 0..2 {
                for j in 0..filled {
                    let d = out.column(j).dot(&v);
                    v.axpy(-d, &out.column(j), 1.0);
                }
            }
            let nv = v.norm();
            if best.as_ref().is_none_or(|b| nv > b.2) {
                best = Some((idx, v, nv));
            }
        }
        let (idx, v, nv) = best.expect("candidate set exhausted");
        out.set_column(filled, &(v / nv));
        candidates.remove(idx);
        filled += 1;
    }
    out
}
