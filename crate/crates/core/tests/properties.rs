//! Property tests: invariants that must hold for every well-formed input.

use mvngeo::closed_form::solve_special;
use mvngeo::linalg::{expm, random_orthogonal, rel_frobenius};
use mvngeo::manifold::{geodesic_canonical, normalize_default};
use mvngeo::paths::{path_point, PathKind};
use mvngeo::{
    fisher_rao_from_velocity, geodesic_from_origin, inner_product, kl, metric_sq, sym_kl,
    GaussianPoint, GeodesicMethod, SymMatrix, TangentVector,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A point from a seed: rotation, log-eigenvalues in `[-2, 2]`, means in `[-3, 3]`.
fn point_strategy(d: usize) -> impl Strategy<Value = GaussianPoint> {
    (
        any::<u64>(),
        prop::collection::vec(-2.0f64..2.0, d),
        prop::collection::vec(-3.0f64..3.0, d),
    )
        .prop_map(move |(seed, log_eig, mu)| {
            let q = random_orthogonal(d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let eig: Vec<f64> = log_eig.iter().map(|l| l.exp()).collect();
            GaussianPoint::new(
                DVector::from_vec(mu),
                SymMatrix::from_diagonal(&eig).congruence(&q),
            )
            .unwrap()
        })
}

fn velocity_strategy(d: usize, max_entry: f64) -> impl Strategy<Value = TangentVector> {
    (
        prop::collection::vec(-max_entry..max_entry, d),
        prop::collection::vec(-max_entry..max_entry, d * d),
    )
        .prop_map(move |(x, m)| {
            let m = DMatrix::from_vec(d, d, m);
            TangentVector::new(
                DVector::from_vec(x),
                SymMatrix::new((&m + m.transpose()) * 0.5),
            )
            .unwrap()
        })
}

fn pair_strategy() -> impl Strategy<Value = (GaussianPoint, GaussianPoint)> {
    (1usize..=4).prop_flat_map(|d| (point_strategy(d), point_strategy(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergences_are_nonnegative_and_symmetric((a, b) in pair_strategy()) {
        let ab = kl(&a, &b).unwrap();
        let ba = kl(&b, &a).unwrap();
        prop_assert!(ab >= 0.0 && ba >= 0.0);
        let s = sym_kl(&a, &b).unwrap();
        prop_assert!((s - sym_kl(&b, &a).unwrap()).abs() <= 1e-12 * s.max(1.0));
        prop_assert!((s - 0.5 * (ab + ba)).abs() <= 1e-9 * s.max(1.0));
        prop_assert!(sym_kl(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn normalization_maps_start_to_origin((a, b) in pair_strategy()) {
        let prob = normalize_default(&a, &b).unwrap();
        let d = a.dim();
        let start = prob.normalize_point(&a).unwrap();
        prop_assert!(start.mu().amax() < 1e-10);
        prop_assert!((start.sigma().matrix() - DMatrix::identity(d, d)).amax() < 1e-10);
        let back = prob.denormalize_point(&prob.target).unwrap();
        prop_assert!(sym_kl(&back, &b).unwrap() < 1e-10);
    }

    #[test]
    fn metric_is_positive_and_matches_inner_product(
        (p, v) in (1usize..=4).prop_flat_map(|d| (point_strategy(d), velocity_strategy(d, 2.0)))
    ) {
        let m = metric_sq(&p, &v).unwrap();
        prop_assert!(m >= 0.0);
        let ip = inner_product(&v, &v, &p).unwrap();
        prop_assert!((m - ip).abs() <= 1e-10 * m.max(1.0));
        let scaled = metric_sq(&p, &v.scale(3.0)).unwrap();
        prop_assert!((scaled - 9.0 * m).abs() <= 1e-10 * scaled.max(1.0));
    }

    #[test]
    fn geodesic_methods_agree_and_start_at_origin(
        v in (1usize..=4).prop_flat_map(|d| velocity_strategy(d, 1.5)),
        t in 0.0f64..1.0,
    ) {
        let d = v.dim();
        let start = geodesic_from_origin(&v, 0.0, GeodesicMethod::MatrixExp).unwrap();
        prop_assert_eq!(start, GaussianPoint::origin(d));
        let e = geodesic_canonical(&v, t, GeodesicMethod::MatrixExp).unwrap();
        let c = geodesic_canonical(&v, t, GeodesicMethod::ClosedForm).unwrap();
        prop_assert!(rel_frobenius(e.precision.matrix(), c.precision.matrix()) < 1e-9);
        prop_assert!((&e.delta - &c.delta).norm() <= 1e-9 * e.delta.norm().max(1.0));
    }

    #[test]
    fn geodesic_time_rescales_velocity(
        v in (1usize..=3).prop_flat_map(|d| velocity_strategy(d, 1.0)),
        t in 0.05f64..1.0,
    ) {
        let at_t = geodesic_from_origin(&v, t, GeodesicMethod::MatrixExp).unwrap();
        let scaled = geodesic_from_origin(&v.scale(t), 1.0, GeodesicMethod::MatrixExp).unwrap();
        prop_assert!(sym_kl(&at_t, &scaled).unwrap() < 1e-20_f64.max(1e-14 * t * t));
    }

    #[test]
    fn closed_form_velocity_reaches_equal_mean_targets(p in (1usize..=4).prop_flat_map(point_strategy)) {
        let target = GaussianPoint::new(DVector::zeros(p.dim()), p.sigma().clone()).unwrap();
        let sol = solve_special(&target).unwrap();
        let end = geodesic_from_origin(&sol.velocity, 1.0, GeodesicMethod::MatrixExp).unwrap();
        prop_assert!(sym_kl(&end, &target).unwrap() < 1e-12);
        prop_assert!((fisher_rao_from_velocity(&sol.velocity) - sol.distance).abs() < 1e-12 * sol.distance.max(1.0));
    }

    #[test]
    fn paths_hit_both_endpoints(
        (a, b) in pair_strategy(),
        kind in prop::sample::select(vec![
            PathKind::Annealing,
            PathKind::Moment,
            PathKind::Wasserstein,
            PathKind::Projection,
            PathKind::Euclidean,
        ]),
    ) {
        let start = path_point(kind, &a, &b, 0.0).unwrap();
        let end = path_point(kind, &a, &b, 1.0).unwrap();
        prop_assert!(sym_kl(&start, &a).unwrap() < 1e-9);
        prop_assert!(sym_kl(&end, &b).unwrap() < 1e-9);
    }

    #[test]
    fn expm_of_negation_is_inverse(entries in prop::collection::vec(-1.0f64..1.0, 9), scale in 0.0f64..5.0) {
        let a = DMatrix::from_vec(3, 3, entries) * scale;
        let e = expm(&a).unwrap();
        let f = expm(&(-&a)).unwrap();
        let bound = 1e-13 * e.norm() * f.norm();
        prop_assert!((&e * &f - DMatrix::identity(3, 3)).norm() <= bound.max(1e-13));
    }
}
