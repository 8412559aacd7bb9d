//! Closed-form weighted rigid alignment.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::gmm::{WeightedGmm, GMM_EPSILON};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, RigidTransform};

/// Relative size of the second singular value below which the weighted
/// points are treated as collinear.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Best rotation for a cross-covariance `H = Σ w (p − c_p)(q − c_q)ᵀ`.
fn rotation_from_covariance(h: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let s = svd.singular_values;
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if !(s[order[0]] > 0.0) || s[order[1]] <= RANK_TOLERANCE * s[order[0]] {
        return Err(Error::DegenerateGeometry(
            "weighted correspondences are collinear or coincident".into(),
        ));
    }
    let mut d = Matrix3::identity();
    d[(order[2], order[2])] = (v * u.transpose()).determinant().signum();
    Ok(v * d * u.transpose())
}

/// Minimizes `Σ_ij w_ij ‖R μ^p_i + t − μ^q_j‖²` over proper rigid motions.
pub fn weighted_svd(mu_p: &DMatrix<f64>, mu_q: &DMatrix<f64>, weights: &DMatrix<f64>) -> Result<RigidTransform> {
    let (l, m) = weights.shape();
    if mu_p.shape() != (l, 3) || mu_q.shape() != (m, 3) {
        return Err(Error::ShapeMismatch(format!(
            "means {:?} and {:?} do not fit a {l}x{m} plan",
            mu_p.shape(),
            mu_q.shape()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(invalid("plan weights must be finite and nonnegative"));
    }
    let total = weights.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateGeometry("plan carries no weight".into()));
    }
    let row = |m: &DMatrix<f64>, i: usize| Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)]);
    let row_mass: Vec<f64> = weights.row_iter().map(|r| r.sum()).collect();
    let col_mass: Vec<f64> = weights.column_iter().map(|c| c.sum()).collect();
    let cp = (0..l).map(|i| row(mu_p, i) * row_mass[i]).sum::<Vector3<f64>>() / total;
    let cq = (0..m).map(|j| row(mu_q, j) * col_mass[j]).sum::<Vector3<f64>>() / total;
    let mut h = Matrix3::zeros();
    for i in 0..l {
        let dp = row(mu_p, i) - cp;
        for j in 0..m {
            let w = weights[(i, j)];
            if w != 0.0 {
                h += w * dp * (row(mu_q, j) - cq).transpose();
            }
        }
    }
    let r = rotation_from_covariance(&h)?;
    RigidTransform::new(r, cq - r * cp)
}

/// Weighted alignment of index-paired point lists.
pub fn weighted_kabsch(p: &[Point3], q: &[Point3], w: &[f64]) -> Result<RigidTransform> {
    if p.len() != q.len() || p.len() != w.len() {
        return Err(Error::ShapeMismatch("correspondence lists differ in length".into()));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateGeometry("correspondences carry no weight".into()));
    }
    let cp = p.iter().zip(w).map(|(x, wi)| x.coords * *wi).sum::<Vector3<f64>>() / total;
    let cq = q.iter().zip(w).map(|(x, wi)| x.coords * *wi).sum::<Vector3<f64>>() / total;
    let mut h = Matrix3::zeros();
    for ((a, b), wi) in p.iter().zip(q).zip(w) {
        h += *wi * (a.coords - cp) * (b.coords - cq).transpose();
    }
    let r = rotation_from_covariance(&h)?;
    RigidTransform::new(r, cq - r * cp)
}

/// Largest singular value of a covariance.
fn spectral_norm(m: &Matrix3<f64>) -> f64 {
    m.singular_values().max()
}

/// Per-component weights `(π^p_j + π^q_j) / (ε + σ^p_j + σ^q_j)` where σ is
/// the spectral norm of the covariance.
pub fn gmm_l2_weights(gmm_p: &WeightedGmm, gmm_q: &WeightedGmm) -> Result<Vec<f64>> {
    if gmm_p.num_components() != gmm_q.num_components() {
        return Err(Error::ShapeMismatch("mixtures differ in component count".into()));
    }
    Ok((0..gmm_p.num_components())
        .map(|j| {
            let pi = gmm_p.weights[j] + gmm_q.weights[j];
            let sigma = spectral_norm(&gmm_p.covariances[j]) + spectral_norm(&gmm_q.covariances[j]);
            pi / (GMM_EPSILON + sigma)
        })
        .collect())
}

/// Aligns index-matched component means, trusting tight, heavy components.
pub fn gmm_l2_svd(gmm_p: &WeightedGmm, gmm_q: &WeightedGmm) -> Result<RigidTransform> {
    let w = gmm_l2_weights(gmm_p, gmm_q)?;
    let p: Vec<Point3> = gmm_p.means.iter().map(|m| Point3::from(*m)).collect();
    let q: Vec<Point3> = gmm_q.means.iter().map(|m| Point3::from(*m)).collect();
    weighted_kabsch(&p, &q, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_transform;

    fn sample_means() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            5,
            3,
            &[0.1, 0.2, 0.3, -1.0, 0.5, 0.0, 0.4, -0.7, 1.1, 0.9, 0.9, -0.2, -0.3, 0.0, 0.6],
        )
    }

    fn apply_rows(t: &RigidTransform, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for i in 0..m.nrows() {
            let p = t.apply_point(&Point3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)]));
            for a in 0..3 {
                out[(i, a)] = p[a];
            }
        }
        out
    }

    #[test]
    fn identity_on_identical_means() {
        let m = sample_means();
        let t = weighted_svd(&m, &m, &(DMatrix::identity(5, 5) * 0.2)).unwrap();
        assert!((t.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation.amax() < 1e-12);
    }

    #[test]
    fn recovers_rotation_about_diagonal() {
        let axis = Vector3::new(1.0, 1.0, 1.0);
        let mut truth = RigidTransform::from_axis_angle(&axis, 30f64.to_radians());
        truth.translation = Vector3::new(0.3, -0.2, 0.7);
        let p = sample_means();
        let q = apply_rows(&truth, &p);
        let t = weighted_svd(&p, &q, &DMatrix::identity(5, 5)).unwrap();
        assert!((t.rotation - truth.rotation).norm() < 1e-10);
        assert!((t.translation - truth.translation).norm() < 1e-10);
    }

    #[test]
    fn reflections_are_never_returned() {
        let p = sample_means();
        let mut q = p.clone();
        for i in 0..5 {
            q[(i, 2)] = -q[(i, 2)];
        }
        let t = weighted_svd(&p, &q, &DMatrix::identity(5, 5)).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let err = weighted_svd(&p, &p, &DMatrix::identity(3, 3)).unwrap_err();
        assert_eq!(err.kind(), "geometry");
        assert!(weighted_svd(&p, &p, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn planar_points_are_enough() {
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let truth = random_transform(3, 45.0, 0.5).unwrap();
        let q = apply_rows(&truth, &p);
        let t = weighted_svd(&p, &q, &DMatrix::identity(3, 3)).unwrap();
        assert!((t.rotation - truth.rotation).norm() < 1e-10);
    }

    fn isotropic_gmm(means: &DMatrix<f64>, var: f64) -> WeightedGmm {
        let l = means.nrows();
        WeightedGmm {
            weights: vec![1.0 / l as f64; l],
            means: (0..l).map(|i| Vector3::new(means[(i, 0)], means[(i, 1)], means[(i, 2)])).collect(),
            covariances: vec![Matrix3::identity() * var; l],
            feature_centroids: DMatrix::zeros(l, 0),
            effective_mass: 1.0,
        }
    }

    #[test]
    fn l2_solver_recovers_rotation() {
        let truth = random_transform(8, 45.0, 0.5).unwrap();
        let p = sample_means();
        let gp = isotropic_gmm(&p, 0.01);
        let gq = isotropic_gmm(&apply_rows(&truth, &p), 0.01);
        let t = gmm_l2_svd(&gp, &gq).unwrap();
        assert!((t.rotation - truth.rotation).norm() < 1e-10);
        let same = gmm_l2_svd(&gp, &gp).unwrap();
        assert!((same.rotation - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn l2_with_equal_weights_is_plain_kabsch() {
        let p = sample_means();
        let mut q = apply_rows(&random_transform(2, 40.0, 0.4).unwrap(), &p);
        q[(0, 0)] += 0.05;
        q[(3, 1)] -= 0.08;
        let gp = isotropic_gmm(&p, 0.02);
        let gq = isotropic_gmm(&q, 0.02);
        let a = gmm_l2_svd(&gp, &gq).unwrap();
        let b = weighted_svd(&p, &q, &DMatrix::identity(5, 5)).unwrap();
        assert!((a.rotation - b.rotation).amax() < 1e-12);
        assert!((a.translation - b.translation).amax() < 1e-12);
    }
}
