use nalgebra::{DMatrix, Matrix3, Vector3};
use ogmm_core::attention::{clustered_self_attention, full_self_attention, random_features, AttentionWeights};
use ogmm_core::clustering::{wasserstein_kmeans, ClusterAssignment, KMeansParams, SoftAssignment};
use ogmm_core::data::{sample_shape, ShapeKind};
use ogmm_core::features::{FeatureConfig, FeatureEncoder};
use ogmm_core::geometry::random_transform;
use ogmm_core::losses::welsch;
use ogmm_core::metrics::{ccd, mae_rotation, mae_translation};
use ogmm_core::registration::{estimate_gmm, sinkhorn, weighted_svd, SinkhornParams, GMM_EPSILON};
use ogmm_core::{Point3, PointCloud, RigidTransform};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_points(n: usize, seed: u64) -> Vec<Point3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}

fn rows(points: &[Point3]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 3, |i, a| points[i][a])
}

/// Brute-force moments straight from the definitions.
fn naive_gmm(points: &[Point3], s: &DMatrix<f64>, o: &[f64]) -> (Vec<f64>, Vec<Vector3<f64>>, Vec<Matrix3<f64>>) {
    let n: f64 = o.iter().sum();
    let mut pis = vec![];
    let mut mus = vec![];
    let mut covs = vec![];
    for j in 0..s.ncols() {
        let mut num = 0.0;
        for i in 0..points.len() {
            num += o[i] * s[(i, j)];
        }
        let pi = num / (GMM_EPSILON + n);
        let mut mu = Vector3::zeros();
        for i in 0..points.len() {
            mu += o[i] * s[(i, j)] * points[i].coords;
        }
        mu /= GMM_EPSILON + n * pi;
        let mut cov = Matrix3::zeros();
        for i in 0..points.len() {
            let d = points[i].coords - mu;
            cov += o[i] * s[(i, j)] * d * d.transpose();
        }
        cov /= GMM_EPSILON + n * pi;
        pis.push(pi);
        mus.push(mu);
        covs.push(cov);
    }
    (pis, mus, covs)
}

fn random_memberships(n: usize, l: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut s = DMatrix::from_fn(n, l, |_, _| r.random_range(0.0..1.0));
    for mut row in s.row_iter_mut() {
        let t = row.sum();
        row /= t;
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weighted_svd_recovers_generator(seed in 0u64..1_000_000, l in 3usize..12) {
        let truth = random_transform(seed, 180.0 - 1e-6, 2.0).unwrap();
        let p = random_points(l, seed ^ 0xabc);
        let q: Vec<Point3> = p.iter().map(|x| truth.apply_point(x)).collect();
        let mut r = rng(seed);
        let w = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(l, |_, _| r.random_range(0.1..1.0)));
        let t = weighted_svd(&rows(&p), &rows(&q), &w).unwrap();
        prop_assert!((t.rotation - truth.rotation).norm() < 1e-10);
        prop_assert!((t.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gmm_matches_brute_force(seed in 0u64..1_000_000, n in 1usize..64, l in 1usize..8, zero in any::<bool>()) {
        let mut r = rng(seed);
        let pts = random_points(n, seed + 1);
        let s = random_memberships(n, l, &mut r);
        let o: Vec<f64> = if zero { vec![0.0; n] } else { (0..n).map(|_| r.random_range(0.0..1.0)).collect() };
        let pc = PointCloud::new(pts.clone()).unwrap();
        let soft = SoftAssignment { s: s.clone(), feature_centroids: DMatrix::zeros(l, 1) };
        let g = estimate_gmm(&pc, &soft, &o).unwrap();
        let (pis, mus, covs) = naive_gmm(&pts, &s, &o);
        for j in 0..l {
            prop_assert!((g.weights[j] - pis[j]).abs() <= 1e-10);
            prop_assert!((g.means[j] - mus[j]).amax() <= 1e-10);
            prop_assert!((g.covariances[j] - covs[j]).amax() <= 1e-10);
            prop_assert!(g.weights[j].is_finite() && g.means[j].iter().all(|v| v.is_finite()));
        }
        if zero {
            prop_assert!(g.weights.iter().all(|w| *w == 0.0));
        }
    }

    #[test]
    fn clustered_attention_with_singleton_clusters_is_full(seed in 0u64..1_000_000, n in 2usize..64) {
        let f = random_features(n, 16, seed);
        let w = AttentionWeights::new(16, 4, seed + 7).unwrap();
        let gamma = ClusterAssignment::from_labels(&f, (0..n).collect(), n).unwrap();
        let a = clustered_self_attention(&f, &gamma, &w).unwrap();
        let b = full_self_attention(&f, &w).unwrap();
        prop_assert!((a - b).amax() <= 1e-6);
    }

    #[test]
    fn sinkhorn_plans_satisfy_marginals(seed in 0u64..1_000_000, l in 1usize..10, m in 1usize..10) {
        let mut r = rng(seed);
        let cost = DMatrix::from_fn(l, m, |_, _| r.random_range(0.0..1.0));
        let norm = |v: Vec<f64>| { let t: f64 = v.iter().sum(); v.into_iter().map(|x| x / t).collect::<Vec<_>>() };
        let a = norm((0..l).map(|_| r.random_range(0.1..1.0)).collect());
        let b = norm((0..m).map(|_| r.random_range(0.1..1.0)).collect());
        let out = sinkhorn(&cost, &a, &b, &SinkhornParams::default()).unwrap();
        prop_assert!(out.plan.matrix().iter().all(|v| *v >= 0.0));
        if out.converged {
            prop_assert!(out.plan.marginal_violation(&a, &b) <= 1e-6);
        }
    }

    #[test]
    fn wasserstein_kmeans_is_balanced(seed in 0u64..1_000_000, n in 8usize..120, j in 1usize..8) {
        let pc = PointCloud::new(random_points(n, seed)).unwrap();
        let c = wasserstein_kmeans(&pc, j, seed, &KMeansParams::default()).unwrap();
        let lo = n / j;
        for &s in &c.sizes {
            prop_assert!(s == lo || s == lo + 1);
        }
        prop_assert_eq!(c.sizes.iter().sum::<usize>(), n);
    }

    #[test]
    fn ccd_is_symmetric_and_clipped(seed in 0u64..1_000_000, n in 1usize..40, m in 1usize..40, clip in 0.01f64..1.0) {
        let a = random_points(n, seed);
        let b = random_points(m, seed + 1);
        let ab = ccd(&a, &b, clip).unwrap();
        prop_assert!((ab - ccd(&b, &a, clip).unwrap()).abs() < 1e-15);
        prop_assert!(ab >= 0.0 && ab <= clip * (1.0 + 1e-12));
        let naive_side = |x: &[Point3], y: &[Point3]| {
            x.iter().map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min).min(clip)).sum::<f64>()
                / x.len() as f64
        };
        let naive = 0.5 * (naive_side(&a, &b) + naive_side(&b, &a));
        prop_assert!((ab - naive).abs() < 1e-12);
    }

    #[test]
    fn transform_metrics_vanish_on_identity(seed in 0u64..1_000_000) {
        let t = random_transform(seed, 89.0, 1.0).unwrap();
        let back = RigidTransform::new(t.rotation, t.translation).unwrap();
        prop_assert!(mae_rotation(&t, &back) < 1e-9);
        prop_assert_eq!(mae_translation(&t, &t), 0.0);
    }

    #[test]
    fn welsch_is_bounded_and_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0, nu in 0.01f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (x, y) = (welsch(lo, nu).unwrap(), welsch(hi, nu).unwrap());
        prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        prop_assert!(x <= y);
        prop_assert_eq!(welsch(-a, nu).unwrap(), welsch(a, nu).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encoding_is_rigid_invariant(seed in 0u64..1_000_000) {
        let pc = sample_shape(ShapeKind::Composite, 128, seed).unwrap();
        let enc = FeatureEncoder::new(FeatureConfig::default()).unwrap();
        let base = enc.encode(&pc).unwrap();
        let t = random_transform(seed + 1, 180.0 - 1e-6, 5.0).unwrap();
        let moved = enc.encode(&t.apply(&pc)).unwrap();
        let diff = (base.features().unwrap() - moved.features().unwrap()).amax();
        prop_assert!(diff <= 1e-6, "max difference {diff}");
    }
}
