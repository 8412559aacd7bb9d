//! Overlap-weighted mixture registration.
//!
//! [`register`] runs the full pipeline: invariant features, geometric
//! clustering, clustered self- and cross-attention, overlap scores, soft
//! memberships against feature centroids shared by both clouds, weighted
//! mixtures, component matching and the closed-form transform.

pub mod gmm;
pub mod icp;
pub mod procrustes;
pub mod sinkhorn;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attention::{clustered_cross_attention, clustered_self_attention, overlap_scores, AttentionStack};
use crate::clustering::{
    soft_assign_to_centroids, squared_distances, wasserstein_kmeans, wasserstein_kmeans_rows, KMeansParams,
};
use crate::data::{sub_seed, RegistrationPair};
use crate::error::{invalid, Error, Result};
use crate::features::{FeatureConfig, FeatureEncoder};
use crate::geometry::{PointCloud, RigidTransform};

pub use gmm::{estimate_gmm, match_components, WeightedGmm, GMM_EPSILON};
pub use icp::{icp_baseline, IcpOutcome, IcpParams};
pub use procrustes::{gmm_l2_svd, gmm_l2_weights, weighted_kabsch, weighted_svd};
pub use sinkhorn::{sinkhorn, SinkhornOutcome, SinkhornParams, TransportPlan};

/// Where the per-point overlap scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Scores from the overlap head.
    Predicted,
    /// Scores supplied by the caller, e.g. ground-truth labels.
    Oracle,
    /// Every score is one.
    Unguided,
}

/// How the transform is recovered from the two mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Transport plan between components, then weighted SVD.
    Ot,
    /// Index-aligned components weighted by mass over spread.
    GmmL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Geometric clusters J used by the attention layers.
    pub clusters: usize,
    /// Mixture components L.
    pub components: usize,
    pub features: FeatureConfig,
    pub heads: usize,
    /// Temperature of the overlap head.
    pub tau: f64,
    /// Temperature of the membership softmax.
    pub temperature: f64,
    pub kmeans: KMeansParams,
    pub sinkhorn: SinkhornParams,
    pub overlap_mode: OverlapMode,
    pub solver: Solver,
    /// Extra matching rounds that add the geometric residual to the cost.
    pub refine: usize,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            clusters: 72,
            components: 48,
            features: FeatureConfig::default(),
            heads: crate::attention::DEFAULT_HEADS,
            tau: 0.1,
            temperature: 0.1,
            kmeans: KMeansParams::default(),
            sinkhorn: SinkhornParams::default(),
            overlap_mode: OverlapMode::Predicted,
            solver: Solver::Ot,
            refine: 0,
            seed: 0,
        }
    }
}

impl RegistrationConfig {
    /// Full-size hyperparameters.
    pub fn paper() -> Self {
        Self::default()
    }

    /// Scaled-down settings for quick runs.
    pub fn desk() -> Self {
        Self {
            clusters: 16,
            components: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.clusters == 0 || self.components == 0 {
            return Err(invalid("cluster and component counts must be >= 1"));
        }
        if self.heads == 0 || self.features.d % self.heads != 0 {
            return Err(invalid(format!(
                "feature dimension {} is not divisible by {} heads",
                self.features.d, self.heads
            )));
        }
        if !(self.tau > 0.0) || !(self.temperature > 0.0) {
            return Err(invalid("tau and temperature must be > 0"));
        }
        if !(self.sinkhorn.epsilon > 0.0) || !(self.kmeans.sinkhorn.epsilon > 0.0) {
            return Err(invalid("transport regularization must be > 0"));
        }
        Ok(())
    }

    /// Smallest cloud the pipeline accepts.
    pub fn min_points(&self) -> usize {
        self.clusters.max(self.components).max(self.features.k_neighbors + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub overlap_mode: OverlapMode,
    /// Set when the scores carried no mass and all-ones scores were used.
    pub unguided_fallback: bool,
    pub solver: Solver,
    pub kmeans_iterations: [usize; 2],
    pub feature_kmeans_iterations: usize,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_converged: bool,
    pub marginal_error: f64,
    /// `Σ Γ_ij ‖T(μ^p_i) − μ^q_j‖² / Σ Γ_ij` for the returned transform.
    pub weighted_residual: f64,
    pub refine_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub overlap_source: Vec<f64>,
    pub overlap_target: Vec<f64>,
    pub gmm_source: WeightedGmm,
    pub gmm_target: WeightedGmm,
    /// Most probable mixture component of each source point.
    pub component_labels_source: Vec<usize>,
    pub component_labels_target: Vec<usize>,
    pub plan: TransportPlan,
    pub diagnostics: Diagnostics,
}

impl RegistrationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn weighted_residual(t: &RigidTransform, gp: &WeightedGmm, gq: &WeightedGmm, plan: &DMatrix<f64>) -> f64 {
    let moved: Vec<_> = gp.means.iter().map(|m| t.rotation * m + t.translation).collect();
    let mut acc = 0.0;
    for (i, m) in moved.iter().enumerate() {
        for (j, q) in gq.means.iter().enumerate() {
            acc += plan[(i, j)] * (m - q).norm_squared();
        }
    }
    acc / plan.sum()
}

fn check_scores(name: &str, scores: &[f64], n: usize) -> Result<()> {
    if scores.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} {name} overlap scores for {n} points",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(invalid(format!("{name} overlap scores must lie in [0, 1]")));
    }
    Ok(())
}

fn divide_by_mean(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.mean();
    if mean > 0.0 {
        m / mean
    } else {
        m.clone()
    }
}

/// Estimates the rigid transform taking `source` onto `target`.
///
/// `oracle` supplies per-point scores for [`OverlapMode::Oracle`] and is
/// ignored otherwise.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &RegistrationConfig,
    oracle: Option<(&[f64], &[f64])>,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let need = cfg.min_points();
    for (name, pc) in [("source", source), ("target", target)] {
        if pc.len() < need {
            return Err(invalid(format!("{name} has {} points, at least {need} needed", pc.len())));
        }
    }

    let encoder = FeatureEncoder::new(cfg.features)?;
    let fp = encoder.local_descriptor(source)? + encoder.positional_encoding(source)?;
    let fq = encoder.local_descriptor(target)? + encoder.positional_encoding(target)?;

    let km_seed = sub_seed(cfg.seed, 31);
    let gamma_p = wasserstein_kmeans(source, cfg.clusters, km_seed, &cfg.kmeans)?;
    let gamma_q = wasserstein_kmeans(target, cfg.clusters, km_seed, &cfg.kmeans)?;

    let nets = AttentionStack::new(cfg.features.d, cfg.heads, cfg.tau, cfg.features.mlp_seed)?;
    let sp = clustered_self_attention(&fp, &gamma_p, &nets.self_attention)?;
    let sq = clustered_self_attention(&fq, &gamma_q, &nets.self_attention)?;

    let (mut op, mut oq) = match cfg.overlap_mode {
        OverlapMode::Predicted => {
            let tp = clustered_cross_attention(&sp, &sq, &gamma_q, &nets.cross_attention)?;
            let tq = clustered_cross_attention(&sq, &sp, &gamma_p, &nets.cross_attention)?;
            (
                overlap_scores(&tp, &tq, &nets.overlap)?,
                overlap_scores(&tq, &tp, &nets.overlap)?,
            )
        }
        OverlapMode::Oracle => {
            let (a, b) = oracle.ok_or_else(|| invalid("oracle overlap mode needs scores for both clouds"))?;
            check_scores("source", a, source.len())?;
            check_scores("target", b, target.len())?;
            (a.to_vec(), b.to_vec())
        }
        OverlapMode::Unguided => (vec![1.0; source.len()], vec![1.0; target.len()]),
    };
    let unguided_fallback = op.iter().sum::<f64>() <= 0.0 || oq.iter().sum::<f64>() <= 0.0;
    if unguided_fallback {
        op = vec![1.0; source.len()];
        oq = vec![1.0; target.len()];
    }

    // one set of feature centroids for both clouds keeps components aligned
    let mut stacked = DMatrix::zeros(sp.nrows() + sq.nrows(), sp.ncols());
    stacked.rows_mut(0, sp.nrows()).copy_from(&sp);
    stacked.rows_mut(sp.nrows(), sq.nrows()).copy_from(&sq);
    let fkm = wasserstein_kmeans_rows(&stacked, cfg.components, sub_seed(cfg.seed, 32), &cfg.kmeans)?;
    let soft_p = soft_assign_to_centroids(&sp, &fkm.centroids, cfg.temperature)?;
    let soft_q = soft_assign_to_centroids(&sq, &fkm.centroids, cfg.temperature)?;

    let gmm_p = estimate_gmm(&source.clone().with_features(sp)?, &soft_p, &op)?;
    let gmm_q = estimate_gmm(&target.clone().with_features(sq)?, &soft_q, &oq)?;
    let mu_p = gmm_p.means_matrix();
    let mu_q = gmm_q.means_matrix();

    let mut refine_iterations = 0;
    let (transform, plan, sk_iter, sk_conv, marginal_error) = match cfg.solver {
        Solver::Ot => {
            let mut out = match_components(&gmm_p, &gmm_q, &cfg.sinkhorn)?;
            let mut t = weighted_svd(&mu_p, &mu_q, out.plan.matrix())?;
            if cfg.refine > 0 {
                let a = gmm_p.normalized_weights().expect("mass checked above");
                let b = gmm_q.normalized_weights().expect("mass checked above");
                let feature_cost =
                    divide_by_mean(&squared_distances(&gmm_p.feature_centroids, &gmm_q.feature_centroids));
                for _ in 0..cfg.refine {
                    let mut moved = mu_p.clone();
                    for i in 0..moved.nrows() {
                        let m = t.rotation * gmm_p.means[i] + t.translation;
                        moved.row_mut(i).copy_from(&m.transpose());
                    }
                    let cost = &feature_cost + divide_by_mean(&squared_distances(&moved, &mu_q));
                    out = sinkhorn(&cost, &a, &b, &cfg.sinkhorn)?;
                    t = weighted_svd(&mu_p, &mu_q, out.plan.matrix())?;
                    refine_iterations += 1;
                }
            }
            (t, out.plan, out.iterations, out.converged, out.marginal_error)
        }
        Solver::GmmL2 => {
            let t = gmm_l2_svd(&gmm_p, &gmm_q)?;
            let w = gmm_l2_weights(&gmm_p, &gmm_q)?;
            let total: f64 = w.iter().sum();
            let plan = TransportPlan::new(DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                w.len(),
                w.iter().map(|v| v / total),
            )))?;
            (t, plan, 0, true, 0.0)
        }
    };

    let diagnostics = Diagnostics {
        overlap_mode: cfg.overlap_mode,
        unguided_fallback,
        solver: cfg.solver,
        kmeans_iterations: [gamma_p.iterations, gamma_q.iterations],
        feature_kmeans_iterations: fkm.iterations,
        sinkhorn_iterations: sk_iter,
        sinkhorn_converged: sk_conv,
        marginal_error,
        weighted_residual: weighted_residual(&transform, &gmm_p, &gmm_q, plan.matrix()),
        refine_iterations,
    };
    Ok(RegistrationResult {
        transform,
        overlap_source: op,
        overlap_target: oq,
        gmm_source: gmm_p,
        gmm_target: gmm_q,
        component_labels_source: soft_p.hard_labels(),
        component_labels_target: soft_q.hard_labels(),
        plan,
        diagnostics,
    })
}

/// Registers a generated pair, using its ground-truth labels as the oracle
/// scores.
pub fn register_pair(pair: &RegistrationPair, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    let to_scores = |labels: &[bool]| -> Vec<f64> { labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() };
    let a = to_scores(&pair.gt_overlap_source);
    let b = to_scores(&pair.gt_overlap_target);
    register(&pair.source, &pair.target, cfg, Some((&a, &b)))
}
