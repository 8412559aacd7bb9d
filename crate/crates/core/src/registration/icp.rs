//! Point-to-point ICP used as a comparison baseline.

use serde::{Deserialize, Serialize};

use super::procrustes::weighted_kabsch;
use crate::error::{invalid, Result};
use crate::geometry::{KdTree, Point3, PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iter: usize,
    /// Stop once an update moves the estimate by less than this
    /// (rotation Frobenius distance plus translation norm).
    pub tol: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpOutcome {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub converged: bool,
    /// Root mean squared nearest-neighbor distance before each update.
    pub objective_history: Vec<f64>,
}

pub fn icp_baseline(source: &PointCloud, target: &PointCloud, params: &IcpParams) -> Result<IcpOutcome> {
    if params.max_iter == 0 {
        return Err(invalid("ICP needs at least one iteration"));
    }
    let tree = KdTree::from_cloud(target);
    let src = source.points();
    let weights = vec![1.0; src.len()];
    let mut current = RigidTransform::identity();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..params.max_iter {
        iterations += 1;
        let mut matched: Vec<Point3> = Vec::with_capacity(src.len());
        let mut sq = 0.0;
        for p in src {
            let hit = tree.nearest(&current.apply_point(p)).expect("target is nonempty");
            sq += hit.squared_distance;
            matched.push(target.points()[hit.index]);
        }
        history.push((sq / src.len() as f64).sqrt());
        let next = weighted_kabsch(src, &matched, &weights)?;
        let motion = (next.rotation - current.rotation).norm()
            + (next.translation - current.translation).norm();
        current = next;
        if motion < params.tol {
            converged = true;
            break;
        }
    }
    Ok(IcpOutcome {
        transform: current,
        iterations,
        converged,
        objective_history: history,
    })
}
