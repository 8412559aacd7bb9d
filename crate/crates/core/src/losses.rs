//! Training losses evaluated as diagnostics: overlap cross-entropy, robust
//! registration error and the mixture clustering loss.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::data::RegistrationPair;
use crate::error::{invalid, Error, Result};
use crate::geometry::{KdTree, PointCloud, RigidTransform};
use crate::registration::{RegistrationResult, WeightedGmm};

/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-7;

/// Step of the central differences in [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(invalid(format!("Welsch scale must be > 0, got {nu}")));
    }
    Ok(())
}

/// `ψ_ν(x) = 1 − exp(−x² / 2ν²)`.
pub fn welsch(x: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok(-(-x * x / (2.0 * nu * nu)).exp_m1())
}

/// `ψ'_ν(x) = (x / ν²) exp(−x² / 2ν²)`.
pub fn welsch_derivative(x: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok(x / (nu * nu) * (-x * x / (2.0 * nu * nu)).exp())
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Binary cross-entropy of one prediction.
pub fn bce(p: f64, label: bool) -> f64 {
    let p = clamp_probability(p);
    if label {
        -p.ln()
    } else {
        -(-p).ln_1p()
    }
}

/// Derivative of [`bce`] with respect to the prediction, inside the clamp.
pub fn bce_derivative(p: f64, label: bool) -> f64 {
    let p = clamp_probability(p);
    if label {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

pub fn mean_bce(predicted: &[f64], labels: &[bool]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if predicted.is_empty() {
        return Err(invalid("cannot average over zero predictions"));
    }
    Ok(predicted.iter().zip(labels).map(|(p, l)| bce(*p, *l)).sum::<f64>() / predicted.len() as f64)
}

/// Average of the two per-cloud mean cross-entropies.
pub fn overlap_score_loss(
    predicted_p: &[f64],
    labels_p: &[bool],
    predicted_q: &[f64],
    labels_q: &[bool],
) -> Result<f64> {
    Ok(0.5 * (mean_bce(predicted_p, labels_p)? + mean_bce(predicted_q, labels_q)?))
}

/// `Σ_p ψ_ν(‖T̂(p) − m(T̄(p), Q)‖)` where `m` is the nearest target point to
/// the ground-truth image of `p`.
pub fn global_registration_loss(
    source: &PointCloud,
    target: &PointCloud,
    estimated: &RigidTransform,
    gt: &RigidTransform,
    nu: f64,
) -> Result<f64> {
    check_nu(nu)?;
    let tree = KdTree::from_cloud(target);
    let mut total = 0.0;
    for p in source.points() {
        let hit = tree.nearest(&gt.apply_point(p)).expect("target is nonempty");
        let d = (estimated.apply_point(p) - target.points()[hit.index]).norm();
        total += welsch(d, nu)?;
    }
    Ok(total)
}

/// Cross-entropy between hard labels and the softmax of negative squared
/// distances to the means: `−Σ_i log softmax_j(−‖p_i − μ_j‖²)[label_i]`.
pub fn clustering_loss(pc: &PointCloud, labels: &[usize], means: &[Vector3<f64>]) -> Result<f64> {
    if labels.len() != pc.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            pc.len()
        )));
    }
    if means.is_empty() {
        return Err(invalid("clustering loss needs at least one mean"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= means.len()) {
        return Err(invalid(format!("label {bad} out of range for {} means", means.len())));
    }
    let mut total = 0.0;
    for (p, &label) in pc.points().iter().zip(labels) {
        let logits: Vec<f64> = means.iter().map(|m| -(p.coords - m).norm_squared()).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - logits[label];
    }
    Ok(total.max(0.0))
}

/// [`clustering_loss`] against the means of a fitted mixture.
pub fn gmm_clustering_loss(pc: &PointCloud, labels: &[usize], gmm: &WeightedGmm) -> Result<f64> {
    clustering_loss(pc, labels, &gmm.means)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub numeric: f64,
    pub analytic: f64,
    pub relative_error: f64,
}

/// Compares `analytic` with the central difference of `f` at `x`.
pub fn gradient_check(f: impl Fn(f64) -> f64, x: f64, analytic: f64) -> GradientCheck {
    let numeric = (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP);
    let scale = numeric.abs().max(analytic.abs()).max(1e-12);
    GradientCheck {
        numeric,
        analytic,
        relative_error: (numeric - analytic).abs() / scale,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub overlap: f64,
    pub registration: f64,
    pub clustering: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            overlap: 1.0,
            registration: 1.0,
            clustering: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub overlap_loss: f64,
    pub registration_loss: f64,
    pub clustering_loss: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossReport {
    pub fn new(overlap: f64, registration: f64, clustering: f64, weights: LossWeights) -> Result<Self> {
        if [overlap, registration, clustering].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("loss parts must be finite and nonnegative"));
        }
        Ok(Self {
            overlap_loss: overlap,
            registration_loss: registration,
            clustering_loss: clustering,
            total: weights.overlap * overlap + weights.registration * registration + weights.clustering * clustering,
            weights,
        })
    }
}

/// All three losses for a registered pair with known ground truth. The
/// clustering loss sums both clouds, each point labeled with its most
/// probable mixture component.
pub fn evaluate_losses(
    pair: &RegistrationPair,
    result: &RegistrationResult,
    nu: f64,
    weights: LossWeights,
) -> Result<LossReport> {
    let overlap = overlap_score_loss(
        &result.overlap_source,
        &pair.gt_overlap_source,
        &result.overlap_target,
        &pair.gt_overlap_target,
    )?;
    let registration =
        global_registration_loss(&pair.source, &pair.target, &result.transform, &pair.gt_transform, nu)?;
    let clustering = gmm_clustering_loss(&pair.source, &result.component_labels_source, &result.gmm_source)?
        + gmm_clustering_loss(&pair.target, &result.component_labels_target, &result.gmm_target)?;
    LossReport::new(overlap, registration, clustering, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_transform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn welsch_values() {
        assert_eq!(welsch(0.0, 0.1).unwrap(), 0.0);
        assert!((welsch(0.1, 0.1).unwrap() - 0.393469).abs() < 1e-6);
        assert!(welsch(10.0, 0.1).unwrap() > 0.999999);
        assert!(welsch(1.0, 0.0).is_err());
        assert!(welsch(1.0, -1.0).is_err());
    }

    #[test]
    fn welsch_derivative_matches_fd() {
        let c = gradient_check(|x| welsch(x, 0.1).unwrap(), 0.07, welsch_derivative(0.07, 0.1).unwrap());
        assert!(c.relative_error <= 1e-6, "{c:?}");
    }

    #[test]
    fn bce_derivative_matches_fd() {
        let c = gradient_check(|p| bce(p, true), 0.3, bce_derivative(0.3, true));
        assert!(c.relative_error <= 1e-6, "{c:?}");
        let c = gradient_check(|p| bce(p, false), 0.3, bce_derivative(0.3, false));
        assert!(c.relative_error <= 1e-6, "{c:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let c = gradient_check(|_| 4.2, 1.0, 0.0);
        assert!(c.numeric.abs() < 1e-7);
        assert_eq!(c.relative_error, 0.0);
    }

    #[test]
    fn bce_edge_values() {
        let labels = [true, false, true, false];
        let perfect = [1.0, 0.0, 1.0, 0.0];
        let l = mean_bce(&perfect, &labels).unwrap();
        assert!(l > 0.0 && l < 1.2e-7);
        let half = [0.5; 4];
        assert!((mean_bce(&half, &labels).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(mean_bce(&half, &labels[..3]).is_err());
    }

    #[test]
    fn overlap_loss_is_symmetric() {
        let (pa, la) = ([0.2, 0.9, 0.4], [false, true, true]);
        let (pb, lb) = ([0.7, 0.1], [true, true]);
        let ab = overlap_score_loss(&pa, &la, &pb, &lb).unwrap();
        let ba = overlap_score_loss(&pb, &lb, &pa, &la).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn registration_loss_single_point() {
        let src = PointCloud::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let tgt = PointCloud::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let est = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let l = global_registration_loss(&src, &tgt, &est, &RigidTransform::identity(), 0.1).unwrap();
        assert!((l - welsch(0.1, 0.1).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn registration_loss_prefers_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = PointCloud::new(
            (0..100)
                .map(|_| crate::Point3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap();
        let gt = random_transform(4, 45.0, 0.5).unwrap();
        let tgt = gt.apply(&src);
        assert_eq!(global_registration_loss(&src, &tgt, &gt, &gt, 0.1).unwrap(), 0.0);
        let axis = Vector3::new(0.2, 0.4, -1.0);
        let nudged = RigidTransform::from_axis_angle(&axis, 5f64.to_radians()).compose(&gt);
        let worse = global_registration_loss(&src, &tgt, &nudged, &gt, 0.1).unwrap();
        assert!(worse > 0.0);
        let mut rev: Vec<_> = tgt.points().to_vec();
        rev.reverse();
        let shuffled = PointCloud::new(rev).unwrap();
        let again = global_registration_loss(&src, &shuffled, &nudged, &gt, 0.1).unwrap();
        assert!((again - worse).abs() < 1e-12);
    }

    #[test]
    fn clustering_loss_by_hand() {
        let pc = PointCloud::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let means = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)];
        // point 0: distances 0 and 4; point 1: distances 1 and 1
        let want = -(1.0 / (1.0 + (-4f64).exp())).ln() + 2f64.ln();
        let got = clustering_loss(&pc, &[0, 1], &means).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert_eq!(clustering_loss(&pc, &[0, 0], &means[..1]).unwrap(), 0.0);
        let far = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(100.0, 0.0, 0.0)];
        let tiny = clustering_loss(&PointCloud::from_rows(&[[0.0; 3]]).unwrap(), &[0], &far).unwrap();
        assert!(tiny >= 0.0 && tiny < 1e-300);
    }

    #[test]
    fn report_totals_parts() {
        let r = LossReport::new(0.5, 2.0, 1.5, LossWeights { overlap: 2.0, ..Default::default() }).unwrap();
        assert_eq!(r.total, 4.5);
        assert!(LossReport::new(-1.0, 0.0, 0.0, Default::default()).is_err());
    }
}
