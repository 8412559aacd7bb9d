//! Multi-head attention whose keys and values are cluster centroids, a full
//! point-to-point reference, and the per-point overlap score head.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::data::sub_seed;
use crate::error::{invalid, Error, Result};
use crate::features::{instance_normalize, Linear, SeededMlp};

/// Numerically stable softmax applied to every row in place.
pub fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let total = row.sum();
        row /= total;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub heads: usize,
    /// Per head, `d_head×d`.
    pub w_q: Vec<DMatrix<f64>>,
    pub w_k: Vec<DMatrix<f64>>,
    pub w_v: Vec<DMatrix<f64>>,
    /// `d×(heads·d_head)`, applied to the concatenated head outputs.
    pub merge: DMatrix<f64>,
    pub mlp: SeededMlp,
}

pub const DEFAULT_HEADS: usize = 4;

impl AttentionWeights {
    /// Xavier-uniform projections and a three layer MLP with instance
    /// normalization after each hidden layer.
    pub fn new(d: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || d == 0 || d % heads != 0 {
            return Err(invalid(format!("feature dimension {d} is not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let proj = |tag: u64| -> Result<Vec<DMatrix<f64>>> {
            (0..heads as u64)
                .map(|h| {
                    let mlp = SeededMlp::new(&[d, dh], sub_seed(seed, tag * 1000 + h))?;
                    Ok(mlp.layers[0].weight.clone())
                })
                .collect()
        };
        let merge = SeededMlp::new(&[d, d], sub_seed(seed, 4))?.layers[0].weight.clone();
        let mlp = SeededMlp::new(&[d, d, d, d], sub_seed(seed, 5))?.instance_norm(true);
        Ok(Self {
            heads,
            w_q: proj(1)?,
            w_k: proj(2)?,
            w_v: proj(3)?,
            merge,
            mlp,
        })
    }

    pub fn dim(&self) -> usize {
        self.merge.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.w_q[0].nrows()
    }

    /// Zeroes the value projections and the MLP so every attention call
    /// returns its input unchanged.
    pub fn zero_values(&mut self) {
        for w in &mut self.w_v {
            w.fill(0.0);
        }
        for l in &mut self.mlp.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let dh = self.head_dim();
        if self.heads == 0
            || [&self.w_q, &self.w_k, &self.w_v].iter().any(|w| w.len() != self.heads)
        {
            return Err(Error::ShapeMismatch("projection count differs from head count".into()));
        }
        let all = self.w_q.iter().chain(&self.w_k).chain(&self.w_v);
        if all.clone().any(|w| w.shape() != (dh, d)) {
            return Err(Error::ShapeMismatch(format!("every projection must be {dh}x{d}")));
        }
        if self.merge.ncols() != self.heads * dh {
            return Err(Error::ShapeMismatch("merge width differs from concatenated heads".into()));
        }
        if self.mlp.in_dim() != d || self.mlp.out_dim() != d {
            return Err(Error::ShapeMismatch(format!("MLP must map {d} to {d}")));
        }
        if !all.chain(std::iter::once(&self.merge)).flat_map(|w| w.iter()).all(|v| v.is_finite()) {
            return Err(invalid("attention weights contain non-finite entries"));
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> WeightsManifest {
        let mut tensors = Vec::new();
        for h in 0..self.heads {
            tensors.push(Tensor::from_matrix(format!("head{h}.w_q"), &self.w_q[h]));
            tensors.push(Tensor::from_matrix(format!("head{h}.w_k"), &self.w_k[h]));
            tensors.push(Tensor::from_matrix(format!("head{h}.w_v"), &self.w_v[h]));
        }
        tensors.push(Tensor::from_matrix("merge".into(), &self.merge));
        for (i, l) in self.mlp.layers.iter().enumerate() {
            tensors.push(Tensor::from_matrix(format!("mlp{i}.weight"), &l.weight));
            tensors.push(Tensor::from_vector(format!("mlp{i}.bias"), &l.bias));
        }
        WeightsManifest {
            heads: self.heads,
            mlp_instance_norm: self.mlp.instance_norm,
            tensors,
        }
    }

    pub fn from_manifest(m: &WeightsManifest) -> Result<Self> {
        let get = |name: &str| -> Result<&Tensor> {
            m.tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| invalid(format!("manifest lacks tensor `{name}`")))
        };
        let mut w_q = Vec::new();
        let mut w_k = Vec::new();
        let mut w_v = Vec::new();
        for h in 0..m.heads {
            w_q.push(get(&format!("head{h}.w_q"))?.to_matrix()?);
            w_k.push(get(&format!("head{h}.w_k"))?.to_matrix()?);
            w_v.push(get(&format!("head{h}.w_v"))?.to_matrix()?);
        }
        let mut layers = Vec::new();
        let mut i = 0;
        while let Ok(w) = get(&format!("mlp{i}.weight")) {
            let b = get(&format!("mlp{i}.bias"))?.to_matrix()?;
            layers.push(Linear {
                weight: w.to_matrix()?,
                bias: DVector::from_column_slice(b.as_slice()),
            });
            i += 1;
        }
        let weights = Self {
            heads: m.heads,
            w_q,
            w_k,
            w_v,
            merge: get("merge")?.to_matrix()?,
            mlp: SeededMlp::from_layers(layers)?.instance_norm(m.mlp_instance_norm),
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_manifest())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: WeightsManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_manifest(&m)
    }
}

/// A named row-major array with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn from_matrix(name: String, m: &DMatrix<f64>) -> Self {
        Self {
            name,
            shape: vec![m.nrows(), m.ncols()],
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn from_vector(name: String, v: &DVector<f64>) -> Self {
        Self {
            name,
            shape: vec![v.len()],
            data: v.as_slice().to_vec(),
        }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let (r, c) = match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            s => return Err(invalid(format!("tensor `{}` has unsupported shape {s:?}", self.name))),
        };
        if r * c != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor `{}` declares {r}x{c} but holds {} values",
                self.name,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(r, c, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub heads: usize,
    pub mlp_instance_norm: bool,
    pub tensors: Vec<Tensor>,
}

/// Mean feature row of every cluster, `J×d`.
pub fn cluster_feature_centroids(
    features: &DMatrix<f64>,
    gamma: &ClusterAssignment,
) -> Result<DMatrix<f64>> {
    if gamma.labels.len() != features.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "assignment covers {} rows, features have {}",
            gamma.labels.len(),
            features.nrows()
        )));
    }
    let mut out = DMatrix::zeros(gamma.num_clusters(), features.ncols());
    let mut counts = vec![0usize; gamma.num_clusters()];
    for (i, &l) in gamma.labels.iter().enumerate() {
        let mut row = out.row_mut(l);
        row += features.row(i);
        counts[l] += 1;
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyCluster(j));
        }
        let mut row = out.row_mut(j);
        row /= c as f64;
    }
    Ok(out)
}

/// Row-softmax attention weights of one head, `N×J`.
fn head_weights(queries: &DMatrix<f64>, keys: &DMatrix<f64>, w: &AttentionWeights, h: usize) -> DMatrix<f64> {
    let q = queries * w.w_q[h].transpose();
    let k = keys * w.w_k[h].transpose();
    let mut s = (q * k.transpose()) / (w.head_dim() as f64).sqrt();
    softmax_rows(&mut s);
    s
}

/// Attention weights of every head for queries against `keys`.
pub fn attention_weights(
    queries: &DMatrix<f64>,
    keys: &DMatrix<f64>,
    w: &AttentionWeights,
) -> Result<Vec<DMatrix<f64>>> {
    check_dims(queries, keys, w)?;
    Ok((0..w.heads).map(|h| head_weights(queries, keys, w, h)).collect())
}

fn check_dims(queries: &DMatrix<f64>, keys: &DMatrix<f64>, w: &AttentionWeights) -> Result<()> {
    let d = w.dim();
    if queries.ncols() != d || keys.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "attention expects {d} columns, got {} and {}",
            queries.ncols(),
            keys.ncols()
        )));
    }
    if queries.nrows() == 0 || keys.nrows() == 0 {
        return Err(invalid("attention needs at least one query and one key"));
    }
    Ok(())
}

/// `x + MLP(merge(concat_h softmax(Q_h K_hᵀ/√d_h) V_h))` with keys and values
/// taken from the rows of `memory`.
pub fn attend(x: &DMatrix<f64>, memory: &DMatrix<f64>, w: &AttentionWeights) -> Result<DMatrix<f64>> {
    check_dims(x, memory, w)?;
    let dh = w.head_dim();
    let mut heads = DMatrix::zeros(x.nrows(), w.heads * dh);
    for h in 0..w.heads {
        let alpha = head_weights(x, memory, w, h);
        let v = memory * w.w_v[h].transpose();
        heads.columns_mut(h * dh, dh).copy_from(&(alpha * v));
    }
    let merged = heads * w.merge.transpose();
    Ok(x + w.mlp.forward(&merged)?)
}

/// Self-attention in which every point attends to the `J` cluster means.
pub fn clustered_self_attention(
    features: &DMatrix<f64>,
    gamma: &ClusterAssignment,
    w: &AttentionWeights,
) -> Result<DMatrix<f64>> {
    attend(features, &cluster_feature_centroids(features, gamma)?, w)
}

/// Self-attention over all point pairs.
pub fn full_self_attention(features: &DMatrix<f64>, w: &AttentionWeights) -> Result<DMatrix<f64>> {
    attend(features, features, w)
}

/// Conditions `features_p` on the cluster means of `features_q`.
pub fn clustered_cross_attention(
    features_p: &DMatrix<f64>,
    features_q: &DMatrix<f64>,
    gamma_q: &ClusterAssignment,
    w: &AttentionWeights,
) -> Result<DMatrix<f64>> {
    attend(features_p, &cluster_feature_centroids(features_q, gamma_q)?, w)
}

/// Linear layer, instance normalization over points, then sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLayer {
    pub linear: Linear,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ScoreLayer {
    pub fn new(input: usize, seed: u64) -> Result<Self> {
        let mlp = SeededMlp::new(&[input, 1], seed)?;
        Ok(Self {
            linear: mlp.layers[0].clone(),
        })
    }

    /// One score in `[0, 1]` per row.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.linear.weight.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "score layer expects {} columns, got {}",
                self.linear.weight.ncols(),
                x.ncols()
            )));
        }
        let mut z = x * self.linear.weight.transpose();
        z.add_scalar_mut(self.linear.bias[0]);
        instance_normalize(&mut z);
        Ok(DVector::from_iterator(z.nrows(), z.iter().map(|v| sigmoid(*v))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapHead {
    pub tau: f64,
    /// Maps a conditioned feature of the other cloud to a score.
    pub g_alpha: ScoreLayer,
    /// Maps `[f_i, aggregated score]` to the final overlap score.
    pub g_beta: ScoreLayer,
}

impl OverlapHead {
    pub fn new(d: usize, tau: f64, seed: u64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(invalid(format!("tau must be > 0, got {tau}")));
        }
        Ok(Self {
            tau,
            g_alpha: ScoreLayer::new(d, sub_seed(seed, 1))?,
            g_beta: ScoreLayer::new(d + 1, sub_seed(seed, 2))?,
        })
    }
}

/// `w_ij = softmax_j(⟨f_i, g_j⟩ / τ)`.
pub fn overlap_weights(f_p: &DMatrix<f64>, f_q: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0) {
        return Err(invalid(format!("tau must be > 0, got {tau}")));
    }
    if f_p.ncols() != f_q.ncols() {
        return Err(Error::ShapeMismatch("feature widths differ".into()));
    }
    let mut w = (f_p * f_q.transpose()) / tau;
    softmax_rows(&mut w);
    Ok(w)
}

/// Overlap probability of every row of `f_p` given the other cloud `f_q`.
pub fn overlap_scores(f_p: &DMatrix<f64>, f_q: &DMatrix<f64>, head: &OverlapHead) -> Result<Vec<f64>> {
    let w = overlap_weights(f_p, f_q, head.tau)?;
    let alpha = head.g_alpha.forward(f_q)?;
    let pooled = w * alpha;
    let mut input = DMatrix::zeros(f_p.nrows(), f_p.ncols() + 1);
    input.columns_mut(0, f_p.ncols()).copy_from(f_p);
    input.set_column(f_p.ncols(), &pooled);
    Ok(head.g_beta.forward(&input)?.iter().copied().collect())
}

/// The fixed networks of one registration: self-attention, cross-attention
/// and the overlap head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStack {
    pub self_attention: AttentionWeights,
    pub cross_attention: AttentionWeights,
    pub overlap: OverlapHead,
}

impl AttentionStack {
    pub fn new(d: usize, heads: usize, tau: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            self_attention: AttentionWeights::new(d, heads, sub_seed(seed, 21))?,
            cross_attention: AttentionWeights::new(d, heads, sub_seed(seed, 22))?,
            overlap: OverlapHead::new(d, tau, sub_seed(seed, 23))?,
        })
    }
}

/// Deterministic random features for tests and benchmarks.
pub fn random_features(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
}
