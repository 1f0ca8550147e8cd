//! Fisher–Rao geometry of multivariate normal distributions.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] — symmetric spectral functions, the matrix exponential and
//!   the even-power functions of a squared generator;
//! * [`manifold`] — points, tangent vectors, the Fisher metric, affine
//!   normalization to the origin and geodesic evaluation;
//! * [`closed_form`] — detection and exact solution of the special cases;
//! * [`paths`] — non-geodesic interpolation paths, path lengths and
//!   approximate geodesic velocities;
//! * [`shooting`] — the shooting solver, parallel transport and path refinement;
//! * [`bench`] — seeded random problems and the comparison experiments.

pub mod bench;
pub mod closed_form;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod paths;
pub mod shooting;

pub use error::{GeoError, Result};
pub use linalg::{SymFn, SymMatrix};
pub use manifold::{
    fisher_rao_from_velocity, geodesic_from_origin, inner_product, kl, metric_sq,
    normalize_to_origin, sym_kl, GaussianPoint, GeodesicMethod, OriginProblem, TangentVector,
};
