//! Overlap-weighted Gaussian mixtures computed in closed form from soft
//! memberships, and optimal transport matching of their components.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::sinkhorn::{sinkhorn, SinkhornOutcome, SinkhornParams};
use crate::clustering::{squared_distances, SoftAssignment};
use crate::error::{invalid, Error, Result};
use crate::geometry::PointCloud;

/// Guard added to every normalizing denominator.
pub const GMM_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGmm {
    /// Mixing weights π; they sum to `n / (ε + n)`.
    pub weights: Vec<f64>,
    pub means: Vec<Vector3<f64>>,
    pub covariances: Vec<Matrix3<f64>>,
    /// Feature-space centroids ν, `L×d`.
    #[serde(with = "crate::serde_rows")]
    pub feature_centroids: DMatrix<f64>,
    /// Total overlap mass `n = Σ o_i`.
    pub effective_mass: f64,
}

impl WeightedGmm {
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    /// Mixing weights rescaled to sum to one, or `None` without mass.
    pub fn normalized_weights(&self) -> Option<Vec<f64>> {
        let total: f64 = self.weights.iter().sum();
        (total > 0.0).then(|| self.weights.iter().map(|w| w / total).collect())
    }

    /// `L×3` matrix of the means.
    pub fn means_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.means.len(), 3, |j, a| self.means[j][a])
    }
}

/// Weighted moments of the rows of `data`: for each component, the
/// ε-guarded weight, mean and scatter.
fn weighted_moments(
    data: &DMatrix<f64>,
    s: &DMatrix<f64>,
    overlap: &[f64],
) -> (Vec<f64>, DMatrix<f64>, Vec<DMatrix<f64>>, f64) {
    let (n_pts, l) = s.shape();
    let dim = data.ncols();
    let mass: f64 = overlap.iter().sum();
    let mut pi = vec![0.0; l];
    let mut means = DMatrix::zeros(l, dim);
    let mut scatter = Vec::with_capacity(l);
    for j in 0..l {
        let w: Vec<f64> = (0..n_pts).map(|i| overlap[i] * s[(i, j)]).collect();
        pi[j] = w.iter().sum::<f64>() / (GMM_EPSILON + mass);
        let denom = GMM_EPSILON + mass * pi[j];
        for (i, wi) in w.iter().enumerate() {
            for a in 0..dim {
                means[(j, a)] += wi * data[(i, a)] / denom;
            }
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for (i, wi) in w.iter().enumerate() {
            if *wi == 0.0 {
                continue;
            }
            for a in 0..dim {
                let da = data[(i, a)] - means[(j, a)];
                for b in 0..dim {
                    cov[(a, b)] += wi * da * (data[(i, b)] - means[(j, b)]);
                }
            }
        }
        scatter.push(cov / denom);
    }
    (pi, means, scatter, mass)
}

/// Mixture parameters of a cloud given memberships `soft.s` and per-point
/// overlap scores, with
/// `π_j = Σ o_i s_ij / (ε + n)`, `μ_j = Σ o_i s_ij p_i / (ε + n π_j)` and
/// `Σ_j = Σ o_i s_ij (p_i − μ_j)(p_i − μ_j)ᵀ / (ε + n π_j)`.
/// Feature centroids use the same formula as the means over the feature
/// rows attached to `pc`.
pub fn estimate_gmm(pc: &PointCloud, soft: &SoftAssignment, overlap: &[f64]) -> Result<WeightedGmm> {
    let n = pc.len();
    if overlap.len() != n || soft.s.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} points, {} overlap scores, {} membership rows",
            overlap.len(),
            soft.s.nrows()
        )));
    }
    if overlap.iter().any(|o| !(0.0..=1.0).contains(o)) {
        return Err(invalid("overlap scores must lie in [0, 1]"));
    }
    if soft.s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("memberships must be finite and nonnegative"));
    }
    let (weights, means, scatter, mass) = weighted_moments(&pc.to_matrix(), &soft.s, overlap);
    let feature_centroids = match pc.features() {
        Some(f) => {
            let (_, nu, _, _) = weighted_moments(f, &soft.s, overlap);
            nu
        }
        None => DMatrix::zeros(soft.s.ncols(), 0),
    };
    Ok(WeightedGmm {
        weights,
        means: means.row_iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect(),
        covariances: scatter
            .iter()
            .map(|c| Matrix3::from_iterator(c.iter().copied()))
            .collect(),
        feature_centroids,
        effective_mass: mass,
    })
}

/// Transports normalized source weights onto normalized target weights with
/// cost `‖ν^p_i − ν^q_j‖²`.
pub fn match_components(
    gmm_p: &WeightedGmm,
    gmm_q: &WeightedGmm,
    params: &SinkhornParams,
) -> Result<SinkhornOutcome> {
    if gmm_p.num_components() != gmm_q.num_components()
        || gmm_p.feature_centroids.ncols() != gmm_q.feature_centroids.ncols()
    {
        return Err(Error::ShapeMismatch(
            "mixtures differ in component count or feature width".into(),
        ));
    }
    let (a, b) = match (gmm_p.normalized_weights(), gmm_q.normalized_weights()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::MarginalMismatch {
                source_mass: gmm_p.effective_mass,
                target_mass: gmm_q.effective_mass,
            })
        }
    };
    let cost = squared_distances(&gmm_p.feature_centroids, &gmm_q.feature_centroids);
    sinkhorn(&cost, &a, &b, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn soft(s: DMatrix<f64>) -> SoftAssignment {
        let l = s.ncols();
        SoftAssignment {
            s,
            feature_centroids: DMatrix::zeros(l, 0),
        }
    }

    #[test]
    fn one_component_full_overlap() {
        let pc = PointCloud::from_rows(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 4.0, 2.0]]).unwrap();
        let g = estimate_gmm(&pc, &soft(DMatrix::from_element(3, 1, 1.0)), &[1.0; 3]).unwrap();
        let n = 3.0;
        assert!((g.weights[0] - n / (GMM_EPSILON + n)).abs() < 1e-15);
        let denom = GMM_EPSILON + n * g.weights[0];
        let mean = Vector3::new(2.0, 4.0, 2.0) / denom;
        assert!((g.means[0] - mean).amax() < 1e-15);
        let mut cov = Matrix3::zeros();
        for p in pc.points() {
            let d = p.coords - mean;
            cov += d * d.transpose();
        }
        assert!((g.covariances[0] - cov / denom).amax() < 1e-14);
        assert_eq!(g.normalized_weights().unwrap(), vec![1.0]);
    }

    #[test]
    fn single_effective_point() {
        let pc = PointCloud::from_rows(&[[1.0, 2.0, 3.0], [5.0, 5.0, 5.0], [-1.0, 0.0, 9.0]]).unwrap();
        let g = estimate_gmm(&pc, &soft(DMatrix::from_element(3, 1, 1.0)), &[1.0, 0.0, 0.0]).unwrap();
        assert!((g.means[0] - Vector3::new(1.0, 2.0, 3.0)).amax() < 1e-3);
        assert!(g.covariances[0].amax() < 1e-6);
    }

    #[test]
    fn zero_overlap_is_guarded() {
        let pc = PointCloud::from_rows(&[[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]]).unwrap();
        let g = estimate_gmm(&pc, &soft(DMatrix::from_element(2, 2, 0.5)), &[0.0, 0.0]).unwrap();
        assert_eq!(g.effective_mass, 0.0);
        assert!(g.weights.iter().all(|w| *w == 0.0));
        assert!(g.means.iter().all(|m| m.iter().all(|v| *v == 0.0)));
        assert!(g.normalized_weights().is_none());
    }

    #[test]
    fn features_follow_the_mean_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..10)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let pc = PointCloud::new(pts).unwrap();
        let f = pc.to_matrix();
        let with_f = pc.clone().with_features(f).unwrap();
        let s = DMatrix::from_fn(10, 3, |i, j| if i % 3 == j { 1.0 } else { 0.0 });
        let o: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let g = estimate_gmm(&with_f, &soft(s), &o).unwrap();
        for j in 0..3 {
            for a in 0..3 {
                assert_eq!(g.feature_centroids[(j, a)], g.means[j][a]);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let pc = PointCloud::from_rows(&[[0.0; 3], [1.0; 3]]).unwrap();
        let s = soft(DMatrix::from_element(2, 1, 1.0));
        assert!(estimate_gmm(&pc, &s, &[1.0]).is_err());
        assert!(estimate_gmm(&pc, &s, &[1.5, 0.0]).is_err());
    }

    fn gmm_with(nu: DMatrix<f64>, weights: Vec<f64>) -> WeightedGmm {
        let l = nu.nrows();
        WeightedGmm {
            weights,
            means: vec![Vector3::zeros(); l],
            covariances: vec![Matrix3::zeros(); l],
            feature_centroids: nu,
            effective_mass: 1.0,
        }
    }

    #[test]
    fn single_component_plan_is_one() {
        let g = gmm_with(DMatrix::from_element(1, 2, 0.3), vec![0.9]);
        let out = match_components(&g, &g, &Default::default()).unwrap();
        assert!((out.plan.matrix()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permuted_copy_gives_scaled_permutation() {
        let nu = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 3.0, 0.0, 0.0, 3.0, 3.0, 3.0]);
        let w = vec![0.1, 0.2, 0.3, 0.4];
        let perm = [2, 0, 3, 1];
        let p = gmm_with(nu.clone(), w.clone());
        let q = gmm_with(
            DMatrix::from_fn(4, 2, |j, a| nu[(perm[j], a)]),
            perm.iter().map(|&k| w[k]).collect(),
        );
        let plan = match_components(&p, &q, &Default::default()).unwrap().plan.into_matrix();
        for (j, &k) in perm.iter().enumerate() {
            assert!((plan[(k, j)] - w[k]).abs() < 1e-6);
        }
        assert!((plan.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_mixtures_concentrate_on_the_diagonal() {
        let nu = DMatrix::from_fn(6, 3, |j, a| if j % 3 == a { 2.0 * (1 + j / 3) as f64 } else { 0.0 });
        let g = gmm_with(nu, vec![1.0 / 6.0; 6]);
        let plan = match_components(&g, &g, &Default::default()).unwrap().plan.into_matrix();
        for j in 0..6 {
            assert!(plan[(j, j)] / plan.row(j).sum() > 0.9);
        }
    }

    #[test]
    fn massless_mixture_cannot_be_matched() {
        let mut g = gmm_with(DMatrix::zeros(2, 1), vec![0.0, 0.0]);
        g.effective_mass = 0.0;
        let h = gmm_with(DMatrix::zeros(2, 1), vec![0.5, 0.5]);
        assert!(matches!(
            match_components(&g, &h, &Default::default()),
            Err(Error::MarginalMismatch { .. })
        ));
    }
}
