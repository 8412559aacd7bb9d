//! Rigid-invariant per-point features: neighborhood statistics lifted by a
//! fixed seeded MLP, plus a spherical positional encoding built from the
//! distance to the centroid and the angles subtended at it by neighbors.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::sub_seed;
use crate::error::{invalid, Error, Result};
use crate::geometry::{KdTree, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub d: usize,
    pub k_neighbors: usize,
    pub mlp_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            d: 32,
            k_neighbors: 5,
            mlp_seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 4 {
            return Err(invalid(format!("feature dimension must be >= 4, got {}", self.d)));
        }
        if self.k_neighbors == 0 {
            return Err(invalid("k_neighbors must be >= 1"));
        }
        Ok(())
    }

    fn check_cloud(&self, pc: &PointCloud) -> Result<()> {
        self.validate()?;
        if pc.len() <= self.k_neighbors {
            return Err(invalid(format!(
                "cloud of {} points needs more than k_neighbors = {} points",
                pc.len(),
                self.k_neighbors
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out×in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Fixed-weight multilayer perceptron applied row-wise.
///
/// Hidden layers are followed by an optional instance normalization (each
/// column standardized over the rows) and a rectifier. The last layer is
/// linear unless `output_relu` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeededMlp {
    pub layers: Vec<Linear>,
    pub instance_norm: bool,
    pub output_relu: bool,
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..=a))
}

impl SeededMlp {
    /// Xavier-uniform weights and zero biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        Self::build(dims, seed, false)
    }

    /// Like [`SeededMlp::new`] but biases are drawn from the same range as
    /// the weights of their layer.
    pub fn with_random_bias(dims: &[usize], seed: u64) -> Result<Self> {
        Self::build(dims, seed, true)
    }

    fn build(dims: &[usize], seed: u64, random_bias: bool) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(invalid(format!("invalid MLP dimensions {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let weight = xavier(&mut rng, w[1], w[0]);
                let bias = if random_bias {
                    let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
                    DVector::from_fn(w[1], |_, _| rng.random_range(-a..=a))
                } else {
                    DVector::zeros(w[1])
                };
                Linear { weight, bias }
            })
            .collect();
        Ok(Self {
            layers,
            instance_norm: false,
            output_relu: false,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let mut mlp = Self::new(dims, 0)?;
        for l in &mut mlp.layers {
            l.weight.fill(0.0);
        }
        Ok(mlp)
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("MLP needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::ShapeMismatch(format!("layer {i}: bias length differs from rows")));
            }
            if i > 0 && layers[i - 1].weight.nrows() != l.weight.ncols() {
                return Err(Error::ShapeMismatch(format!("layer {i}: input width does not chain")));
            }
            if !l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(invalid(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self {
            layers,
            instance_norm: false,
            output_relu: false,
        })
    }

    pub fn instance_norm(mut self, on: bool) -> Self {
        self.instance_norm = on;
        self
    }

    pub fn output_relu(mut self, on: bool) -> Self {
        self.output_relu = on;
        self
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    /// Maps `N×in` rows to `N×out`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "MLP expects {} input columns, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = &h * l.weight.transpose();
            for mut row in h.row_iter_mut() {
                row += l.bias.transpose();
            }
            if i < last {
                if self.instance_norm {
                    instance_normalize(&mut h);
                }
                h.apply(|v| *v = v.max(0.0));
            } else if self.output_relu {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }
}

/// Standardizes every column over the rows in place.
pub fn instance_normalize(x: &mut DMatrix<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        col.apply(|v| *v = (*v - mean) * scale);
    }
}

/// Number of raw invariant statistics per point for `k` neighbors.
pub fn raw_dim(k: usize) -> usize {
    k + 5
}

/// Neighbor indices (self excluded) of every point, nearest first.
fn neighborhoods(pc: &PointCloud, k: usize) -> Vec<Vec<(usize, f64)>> {
    let tree = KdTree::from_cloud(pc);
    pc.points()
        .iter()
        .map(|p| {
            // the closest hit has distance 0: the point itself or an exact duplicate
            tree.k_nearest(p, k + 1)
                .into_iter()
                .skip(1)
                .map(|n| (n.index, n.distance()))
                .collect()
        })
        .collect()
}

/// Per-point rigid invariants, one row of `k + 5` values:
/// the `k` sorted neighbor distances, the square roots of the neighborhood
/// covariance eigenvalues in descending order, the distance to the cloud
/// centroid and the log density `ln(k / (4/3·π·r_k³))`.
pub fn raw_invariants(pc: &PointCloud, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 || pc.len() <= k {
        return Err(invalid(format!("need more than {k} points, got {}", pc.len())));
    }
    let pts = pc.points();
    let centroid = pc.centroid();
    let nbrs = neighborhoods(pc, k);
    let mut out = DMatrix::zeros(pts.len(), raw_dim(k));
    for (i, nb) in nbrs.iter().enumerate() {
        for (c, (_, d)) in nb.iter().enumerate() {
            out[(i, c)] = *d;
        }
        let members: Vec<Vector3<f64>> = std::iter::once(pts[i].coords)
            .chain(nb.iter().map(|(j, _)| pts[*j].coords))
            .collect();
        let mean = members.iter().sum::<Vector3<f64>>() / members.len() as f64;
        let cov = members
            .iter()
            .map(|m| (m - mean) * (m - mean).transpose())
            .sum::<Matrix3<f64>>()
            / members.len() as f64;
        let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (c, e) in eig.iter().enumerate() {
            out[(i, k + c)] = e.max(0.0).sqrt();
        }
        out[(i, k + 3)] = (pts[i] - centroid).norm();
        let rk = nb[k - 1].1.max(1e-9);
        out[(i, k + 4)] = (k as f64 / (4.0 / 3.0 * std::f64::consts::PI * rk.powi(3))).ln();
    }
    Ok(out)
}

/// Angle between two vectors; zero if either has zero length.
pub fn vector_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    if a.norm_squared() == 0.0 || b.norm_squared() == 0.0 {
        return 0.0;
    }
    a.cross(b).norm().atan2(a.dot(b))
}

/// The fixed networks behind [`encode`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub cfg: FeatureConfig,
    /// Lifts the `k + 5` raw invariants to `d`.
    pub descriptor: SeededMlp,
    /// Distance to centroid, scalar to `d`.
    pub phi: SeededMlp,
    /// Neighbor angle, scalar to `d`.
    pub psi: SeededMlp,
}

impl FeatureEncoder {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, k) = (cfg.d, cfg.k_neighbors);
        Ok(Self {
            cfg,
            descriptor: SeededMlp::with_random_bias(&[raw_dim(k), d, d], sub_seed(cfg.mlp_seed, 11))?,
            phi: SeededMlp::with_random_bias(&[1, d], sub_seed(cfg.mlp_seed, 12))?.output_relu(true),
            psi: SeededMlp::with_random_bias(&[1, d], sub_seed(cfg.mlp_seed, 13))?.output_relu(true),
        })
    }

    pub fn zeros(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, k) = (cfg.d, cfg.k_neighbors);
        Ok(Self {
            cfg,
            descriptor: SeededMlp::zeros(&[raw_dim(k), d, d])?,
            phi: SeededMlp::zeros(&[1, d])?.output_relu(true),
            psi: SeededMlp::zeros(&[1, d])?.output_relu(true),
        })
    }

    pub fn local_descriptor(&self, pc: &PointCloud) -> Result<DMatrix<f64>> {
        self.cfg.check_cloud(pc)?;
        self.descriptor.forward(&raw_invariants(pc, self.cfg.k_neighbors)?)
    }

    pub fn positional_encoding(&self, pc: &PointCloud) -> Result<DMatrix<f64>> {
        self.cfg.check_cloud(pc)?;
        let pts = pc.points();
        let c = pc.centroid();
        let rel: Vec<Vector3<f64>> = pts.iter().map(|p| p - c).collect();
        let radii = DMatrix::from_fn(pts.len(), 1, |i, _| rel[i].norm());
        if radii.max() == 0.0 {
            return Err(Error::DegenerateGeometry(
                "every point coincides with the centroid".into(),
            ));
        }
        let mut out = self.phi.forward(&radii)?;
        let nbrs = neighborhoods(pc, self.cfg.k_neighbors);
        for (i, nb) in nbrs.iter().enumerate() {
            let angles =
                DMatrix::from_fn(nb.len(), 1, |r, _| vector_angle(&rel[i], &rel[nb[r].0]));
            let enc = self.psi.forward(&angles)?;
            for c in 0..enc.ncols() {
                out[(i, c)] += enc.column(c).max();
            }
        }
        Ok(out)
    }

    /// Descriptor plus positional encoding, attached to a copy of the cloud.
    pub fn encode(&self, pc: &PointCloud) -> Result<PointCloud> {
        let f = self.local_descriptor(pc)? + self.positional_encoding(pc)?;
        pc.clone().with_features(f)
    }
}

pub fn local_descriptor(pc: &PointCloud, cfg: &FeatureConfig) -> Result<DMatrix<f64>> {
    FeatureEncoder::new(*cfg)?.local_descriptor(pc)
}

pub fn spherical_positional_encoding(pc: &PointCloud, cfg: &FeatureConfig) -> Result<DMatrix<f64>> {
    FeatureEncoder::new(*cfg)?.positional_encoding(pc)
}

pub fn encode(pc: &PointCloud, cfg: &FeatureConfig) -> Result<PointCloud> {
    FeatureEncoder::new(*cfg)?.encode(pc)
}
