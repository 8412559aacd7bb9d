//! Point cloud files and the synthetic partial-overlap pair protocol.

mod format;
mod shapes;

use nalgebra::Vector3;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{random_transform, KdTree, PointCloud, RigidTransform};

pub use format::{format_points, parse_cloud, read_cloud, write_cloud, write_points, CloudFormat};
pub use shapes::{sample_shape, ShapeKind, BOX_HALF_EXTENTS};

/// Overlap label threshold η.
pub const DEFAULT_ETA: f64 = 0.1;

/// Parameters of one synthetic registration pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSpec {
    pub n_points: usize,
    /// Fraction of each cloud kept by the half-space crop.
    pub overlap_keep_fraction: f64,
    pub rot_max_deg: f64,
    pub trans_max: f64,
    /// Standard deviation of the per-coordinate jitter; 0 disables it.
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    /// Fraction of points kept by random density reduction.
    pub density_keep: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            n_points: 1024,
            overlap_keep_fraction: 0.7,
            rot_max_deg: 45.0,
            trans_max: 0.5,
            jitter_sigma: 0.0,
            jitter_clip: 0.05,
            density_keep: 1.0,
            eta: DEFAULT_ETA,
            seed: 0,
        }
    }
}

impl PairSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(invalid("n_points must be at least 1"));
        }
        check_fraction("overlap_keep_fraction", self.overlap_keep_fraction)?;
        check_fraction("density_keep", self.density_keep)?;
        if !(0.0..180.0).contains(&self.rot_max_deg) {
            return Err(invalid("rot_max_deg must lie in [0, 180)"));
        }
        if !(self.trans_max >= 0.0 && self.jitter_sigma >= 0.0 && self.jitter_clip >= 0.0) {
            return Err(invalid("trans_max, jitter_sigma and jitter_clip must be >= 0"));
        }
        if !(self.eta > 0.0) {
            return Err(invalid("eta must be > 0"));
        }
        Ok(())
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(invalid(format!("{name} must lie in (0, 1], got {v}")));
    }
    Ok(())
}

/// A source/target pair with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationPair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps source coordinates onto target coordinates.
    pub gt_transform: RigidTransform,
    pub gt_overlap_source: Vec<bool>,
    pub gt_overlap_target: Vec<bool>,
}

/// Mixes a tag into a seed (splitmix64 finalizer) to derive independent streams.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn kept_count(fraction: f64, n: usize) -> usize {
    // guard against 0.7·10 landing a hair above 7
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Keeps the `⌈keep_fraction·N⌉` points furthest along a seeded random
/// direction, in their original order.
pub fn halfspace_crop(pc: &PointCloud, keep_fraction: f64, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = loop {
        let v = Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        if v.norm() > 1e-12 {
            break v.normalize();
        }
    };
    halfspace_crop_along(pc, keep_fraction, &dir)
}

pub fn halfspace_crop_along(
    pc: &PointCloud,
    keep_fraction: f64,
    direction: &Vector3<f64>,
) -> Result<PointCloud> {
    check_fraction("keep_fraction", keep_fraction)?;
    let n = pc.len();
    let keep = kept_count(keep_fraction, n);
    if keep == n {
        return Ok(pc.clone());
    }
    let heights: Vec<f64> = pc.points().iter().map(|p| p.coords.dot(direction)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| heights[b].total_cmp(&heights[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    pc.select(&kept)
}

/// Random subset of `⌈keep_fraction·N⌉` points, original order preserved.
pub fn density_subsample(pc: &PointCloud, keep_fraction: f64, seed: u64) -> Result<PointCloud> {
    check_fraction("density_keep", keep_fraction)?;
    let n = pc.len();
    let keep = kept_count(keep_fraction, n);
    if keep == n {
        return Ok(pc.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = index::sample(&mut rng, n, keep).into_vec();
    kept.sort_unstable();
    pc.select(&kept)
}

/// Adds per-coordinate Gaussian noise clamped to `[-clip, clip]`.
pub fn jitter(pc: &PointCloud, sigma: f64, clip: f64, seed: u64) -> Result<PointCloud> {
    if sigma == 0.0 {
        return Ok(pc.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = pc
        .points()
        .iter()
        .map(|p| {
            let mut q = *p;
            for a in 0..3 {
                q[a] += normal.sample(&mut rng).clamp(-clip, clip);
            }
            q
        })
        .collect();
    let out = PointCloud::new(points)?;
    match pc.features() {
        Some(f) => out.with_features(f.clone()),
        None => Ok(out),
    }
}

/// Label `i` is set iff the nearest target point to `gt(source_i)` is
/// strictly closer than `eta`.
pub fn gt_overlap_labels(
    source: &PointCloud,
    target: &PointCloud,
    gt: &RigidTransform,
    eta: f64,
) -> Result<Vec<bool>> {
    if !(eta > 0.0) {
        return Err(invalid(format!("eta must be > 0, got {eta}")));
    }
    let tree = KdTree::from_cloud(target);
    Ok(source
        .points()
        .iter()
        .map(|p| {
            let nn = tree.nearest(&gt.apply_point(p)).expect("target is nonempty");
            nn.distance() < eta
        })
        .collect())
}

/// Builds a pair: two independent samples of the shape, each cropped along
/// its own random half-space, optionally thinned, the target moved by a
/// seeded random rigid motion, then both jittered.
pub fn make_pair(spec: &PairSpec, shape: ShapeKind) -> Result<RegistrationPair> {
    spec.validate()?;
    let s = spec.seed;
    let mut source = sample_shape(shape, spec.n_points, sub_seed(s, 1))?;
    let mut target = sample_shape(shape, spec.n_points, sub_seed(s, 2))?;
    source = halfspace_crop(&source, spec.overlap_keep_fraction, sub_seed(s, 3))?;
    target = halfspace_crop(&target, spec.overlap_keep_fraction, sub_seed(s, 4))?;
    source = density_subsample(&source, spec.density_keep, sub_seed(s, 5))?;
    target = density_subsample(&target, spec.density_keep, sub_seed(s, 6))?;
    let gt = random_transform(sub_seed(s, 7), spec.rot_max_deg, spec.trans_max)?;
    target = gt.apply(&target);
    source = jitter(&source, spec.jitter_sigma, spec.jitter_clip, sub_seed(s, 8))?;
    target = jitter(&target, spec.jitter_sigma, spec.jitter_clip, sub_seed(s, 9))?;
    let gt_overlap_source = gt_overlap_labels(&source, &target, &gt, spec.eta)?;
    let gt_overlap_target = gt_overlap_labels(&target, &source, &gt.inverse(), spec.eta)?;
    Ok(RegistrationPair {
        source,
        target,
        gt_transform: gt,
        gt_overlap_source,
        gt_overlap_target,
    })
}
