//! Equal-partition (Wasserstein) K-means and distance-softmax soft assignment.
//!
//! The assignment step transports uniform point mass `1/N` onto uniform
//! cluster mass `1/J` with Sinkhorn, then rounds the plan to a hard labeling
//! greedily by decreasing plan entry. Cluster capacities are `⌊N/J⌋` with
//! exactly `N mod J` clusters allowed one extra member, so every cluster
//! size is within one of `N/J` and no cluster can end up empty.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::softmax_rows;
use crate::error::{invalid, Error, Result};
use crate::geometry::{farthest_point_sample_rows, PointCloud};
use crate::registration::sinkhorn::{sinkhorn, SinkhornParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Stop when no centroid moves further than this.
    pub tol: f64,
    /// Balanced assignment solver; costs are divided by their mean first.
    pub sinkhorn: SinkhornParams,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
            sinkhorn: SinkhornParams {
                epsilon: 0.01,
                max_iter: 50,
                tol: 1e-6,
            },
        }
    }
}

/// Hard point→cluster assignment with per-cluster means.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// `J×dim` cluster means.
    pub centroids: DMatrix<f64>,
    pub sizes: Vec<usize>,
    pub iterations: usize,
    /// K-means objective after each centroid update.
    pub objective_history: Vec<f64>,
}

impl ClusterAssignment {
    /// Builds an assignment from labels, recomputing means over `data` rows.
    pub fn from_labels(data: &DMatrix<f64>, labels: Vec<usize>, clusters: usize) -> Result<Self> {
        if labels.len() != data.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                data.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= clusters) {
            return Err(invalid(format!("label {bad} out of range for {clusters} clusters")));
        }
        let centroids = cluster_means(data, &labels, clusters)?;
        let sizes = sizes(&labels, clusters);
        Ok(Self {
            labels,
            centroids,
            sizes,
            iterations: 0,
            objective_history: Vec::new(),
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// The binary `N×J` membership matrix γ.
    pub fn gamma(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.labels.len(), self.num_clusters());
        for (i, &l) in self.labels.iter().enumerate() {
            g[(i, l)] = 1.0;
        }
        g
    }
}

fn sizes(labels: &[usize], clusters: usize) -> Vec<usize> {
    let mut s = vec![0; clusters];
    for &l in labels {
        s[l] += 1;
    }
    s
}

fn cluster_means(data: &DMatrix<f64>, labels: &[usize], clusters: usize) -> Result<DMatrix<f64>> {
    let mut sums = DMatrix::zeros(clusters, data.ncols());
    let counts = sizes(labels, clusters);
    for (i, &l) in labels.iter().enumerate() {
        let mut row = sums.row_mut(l);
        row += data.row(i);
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyCluster(j));
        }
        let mut row = sums.row_mut(j);
        row /= c as f64;
    }
    Ok(sums)
}

/// `N×J` squared distances between rows of `data` and rows of `centroids`.
pub(crate) fn squared_distances(data: &DMatrix<f64>, centroids: &DMatrix<f64>) -> DMatrix<f64> {
    let x = data.transpose();
    let c = centroids.transpose();
    DMatrix::from_fn(data.nrows(), centroids.nrows(), |i, j| {
        x.column(i)
            .iter()
            .zip(c.column(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

fn objective(dist: &DMatrix<f64>, labels: &[usize]) -> f64 {
    labels.iter().enumerate().map(|(i, &l)| dist[(i, l)]).sum()
}

/// Greedy capacity-constrained rounding of a (log) transport plan.
fn round_balanced(log_plan: &DMatrix<f64>) -> Vec<usize> {
    let (n, j) = log_plan.shape();
    let floor = n / j;
    let extra = n % j;
    let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..j).map(move |c| (i, c))).collect();
    entries.sort_by(|&(i1, c1), &(i2, c2)| {
        log_plan[(i2, c2)]
            .total_cmp(&log_plan[(i1, c1)])
            .then(i1.cmp(&i2))
            .then(c1.cmp(&c2))
    });
    let mut labels = vec![usize::MAX; n];
    let mut size = vec![0usize; j];
    let mut over = 0usize;
    let mut assigned = 0usize;
    for (i, c) in entries {
        if labels[i] != usize::MAX {
            continue;
        }
        let room = size[c] < floor || (size[c] == floor && over < extra);
        if !room {
            continue;
        }
        if size[c] == floor {
            over += 1;
        }
        size[c] += 1;
        labels[i] = c;
        assigned += 1;
        if assigned == n {
            break;
        }
    }
    debug_assert!(labels.iter().all(|&l| l != usize::MAX));
    labels
}

pub fn wasserstein_kmeans(
    pc: &PointCloud,
    clusters: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusterAssignment> {
    wasserstein_kmeans_rows(&pc.to_matrix(), clusters, seed, params)
}

/// Equal-partition K-means over the rows of `data`, seeded through the
/// farthest point sampling start index.
pub fn wasserstein_kmeans_rows(
    data: &DMatrix<f64>,
    clusters: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusterAssignment> {
    let n = data.nrows();
    if clusters == 0 || clusters > n {
        return Err(invalid(format!("cluster count {clusters} must lie in [1, {n}]")));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..n);
    let init = farthest_point_sample_rows(data, clusters, start)?;
    let mut centroids = data.select_rows(&init);

    let a = vec![1.0 / n as f64; n];
    let b = vec![1.0 / clusters as f64; clusters];
    let mut labels: Option<Vec<usize>> = None;
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..params.max_iter.max(1) {
        let dist = squared_distances(data, &centroids);
        let mean = dist.mean();
        let scaled = if mean > 0.0 { &dist / mean } else { dist.clone() };
        let plan = sinkhorn(&scaled, &a, &b, &params.sinkhorn)?;
        let proposal = round_balanced(&plan.log_plan);
        if let Some(prev) = &labels {
            if objective(&dist, &proposal) >= objective(&dist, prev) {
                break;
            }
        }
        iterations += 1;
        let next = cluster_means(data, &proposal, clusters)?;
        let shift = (0..clusters)
            .map(|j| (next.row(j) - centroids.row(j)).norm())
            .fold(0.0, f64::max);
        history.push(objective(&squared_distances(data, &next), &proposal));
        centroids = next;
        labels = Some(proposal);
        if shift < params.tol {
            break;
        }
    }
    let labels = labels.expect("the first assignment is always accepted");
    Ok(ClusterAssignment {
        sizes: sizes(&labels, clusters),
        labels,
        centroids,
        iterations,
        objective_history: history,
    })
}

/// Row-stochastic membership probabilities and the centroids they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    /// `N×L`, rows sum to one.
    pub s: DMatrix<f64>,
    /// `L×d`.
    pub feature_centroids: DMatrix<f64>,
}

impl SoftAssignment {
    pub fn num_components(&self) -> usize {
        self.s.ncols()
    }

    /// Index of the most probable component per row, lowest index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.s
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for (l, v) in r.iter().enumerate() {
                    if *v > r[best] {
                        best = l;
                    }
                }
                best
            })
            .collect()
    }
}

/// Clusters the feature rows into `components` groups and returns
/// `s_il = softmax_l(−‖f_i − c_l‖² / temperature)`.
pub fn soft_assignment(
    features: &DMatrix<f64>,
    components: usize,
    seed: u64,
    temperature: f64,
    params: &KMeansParams,
) -> Result<SoftAssignment> {
    if !(temperature > 0.0) {
        return Err(invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let km = wasserstein_kmeans_rows(features, components, seed, params)?;
    soft_assign_to_centroids(features, &km.centroids, temperature)
}

/// Distance softmax against fixed centroids.
pub fn soft_assign_to_centroids(
    features: &DMatrix<f64>,
    centroids: &DMatrix<f64>,
    temperature: f64,
) -> Result<SoftAssignment> {
    if !(temperature > 0.0) {
        return Err(invalid(format!("temperature must be > 0, got {temperature}")));
    }
    if features.ncols() != centroids.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, centroids {}",
            features.ncols(),
            centroids.ncols()
        )));
    }
    let dist = squared_distances(features, centroids);
    let mut s = dist.map(|d| -d / temperature);
    softmax_rows(&mut s);
    Ok(SoftAssignment {
        s,
        feature_centroids: centroids.clone(),
    })
}
