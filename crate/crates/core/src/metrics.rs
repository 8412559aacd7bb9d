//! Evaluation metrics: Euler-angle and translation MAE, clipped Chamfer
//! distance and the geodesic rotation error.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{wrap_deg, KdTree, Point3, RigidTransform};

/// Default Chamfer clipping threshold.
pub const CCD_CLIP: f64 = 0.1;

/// Mean absolute difference of the Z-Y-X Euler angles, in degrees, each
/// difference wrapped to `(−180, 180]`.
pub fn mae_rotation(estimated: &RigidTransform, gt: &RigidTransform) -> f64 {
    let a = estimated.euler_deg().as_array();
    let b = gt.euler_deg().as_array();
    a.iter().zip(&b).map(|(x, y)| wrap_deg(x - y).abs()).sum::<f64>() / 3.0
}

/// True when either transform sits close enough to gimbal lock that its
/// Euler angles are ill-conditioned.
pub fn near_gimbal_lock(estimated: &RigidTransform, gt: &RigidTransform) -> bool {
    estimated.euler_deg().near_gimbal_lock() || gt.euler_deg().near_gimbal_lock()
}

pub fn mae_translation(estimated: &RigidTransform, gt: &RigidTransform) -> f64 {
    (estimated.translation - gt.translation).abs().sum() / 3.0
}

pub fn geodesic_deg(estimated: &RigidTransform, gt: &RigidTransform) -> f64 {
    estimated.geodesic_deg(gt)
}

fn nn_distances(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    let tree = KdTree::new(to);
    from.iter()
        .map(|p| tree.nearest(p).expect("nonempty").distance())
        .collect()
}

fn check_clouds(a: &[Point3], b: &[Point3], clip: f64) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("Chamfer distance needs two nonempty clouds"));
    }
    if !(clip > 0.0) {
        return Err(invalid(format!("clip must be > 0, got {clip}")));
    }
    Ok(())
}

/// Average of the two directional means of `min(nearest distance, clip)`.
pub fn ccd(a: &[Point3], b: &[Point3], clip: f64) -> Result<f64> {
    check_clouds(a, b, clip)?;
    let side = |from: &[Point3], to: &[Point3]| {
        let d = nn_distances(from, to);
        d.iter().map(|v| v.min(clip)).sum::<f64>() / d.len() as f64
    };
    Ok(0.5 * (side(a, b) + side(b, a)))
}

/// Variant that drops distances above `clip` instead of clipping them.
/// `None` when a direction has no surviving distance.
pub fn ccd_discard(a: &[Point3], b: &[Point3], clip: f64) -> Result<Option<f64>> {
    check_clouds(a, b, clip)?;
    let side = |from: &[Point3], to: &[Point3]| {
        let kept: Vec<f64> = nn_distances(from, to).into_iter().filter(|v| *v <= clip).collect();
        (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
    };
    Ok(match (side(a, b), side(b, a)) {
        (Some(x), Some(y)) => Some(0.5 * (x + y)),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pair_id: String,
    pub seed: u64,
    pub mae_r_deg: f64,
    pub mae_t: f64,
    pub ccd: f64,
    pub geodesic_deg: f64,
    pub runtime_ms: f64,
    pub near_gimbal_lock: bool,
    pub config_hash: String,
}

impl EvalRecord {
    pub const CSV_HEADER: &'static str = "pair_id,seed,mae_r_deg,mae_t,ccd,geodesic_deg,runtime_ms";

    /// Scores an estimate against the ground truth; `ccd` compares the
    /// transformed source with the target.
    pub fn evaluate(
        pair_id: impl Into<String>,
        seed: u64,
        source: &[Point3],
        target: &[Point3],
        estimated: &RigidTransform,
        gt: &RigidTransform,
        runtime_ms: f64,
    ) -> Result<Self> {
        let moved: Vec<Point3> = source.iter().map(|p| estimated.apply_point(p)).collect();
        Ok(Self {
            pair_id: pair_id.into(),
            seed,
            mae_r_deg: mae_rotation(estimated, gt),
            mae_t: mae_translation(estimated, gt),
            ccd: ccd(&moved, target, CCD_CLIP)?,
            geodesic_deg: geodesic_deg(estimated, gt),
            runtime_ms,
            near_gimbal_lock: near_gimbal_lock(estimated, gt),
            config_hash: String::new(),
        })
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.pair_id, self.seed, self.mae_r_deg, self.mae_t, self.ccd, self.geodesic_deg, self.runtime_ms
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_transform, EulerAnglesDeg};
    use nalgebra::{Rotation3, Vector3};

    #[test]
    fn rotation_mae_examples() {
        let gt = RigidTransform::identity();
        assert_eq!(mae_rotation(&gt, &gt), 0.0);
        let est = RigidTransform::from_euler_deg(EulerAnglesDeg::new(10.0, 0.0, 0.0), Vector3::zeros());
        assert!((mae_rotation(&est, &gt) - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_mae_wraps_around() {
        let a = RigidTransform::from_euler_deg(EulerAnglesDeg::new(179.0, 0.0, 0.0), Vector3::zeros());
        let b = RigidTransform::from_euler_deg(EulerAnglesDeg::new(-179.0, 0.0, 0.0), Vector3::zeros());
        assert!((mae_rotation(&a, &b) - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_mae_against_independent_extraction() {
        for seed in 0..50 {
            let a = random_transform(seed, 60.0, 0.0).unwrap();
            let b = random_transform(seed + 1000, 60.0, 0.0).unwrap();
            let euler = |t: &RigidTransform| {
                let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(t.rotation).euler_angles();
                [roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees()]
            };
            let (ea, eb) = (euler(&a), euler(&b));
            let want = (0..3).map(|k| (ea[k] - eb[k]).abs()).sum::<f64>() / 3.0;
            assert!((mae_rotation(&a, &b) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_mae() {
        let a = RigidTransform::from_translation(Vector3::new(0.3, 0.0, 0.0));
        let b = RigidTransform::identity();
        assert!((mae_translation(&a, &b) - 0.1).abs() < 1e-15);
        assert_eq!(mae_translation(&a, &b), mae_translation(&b, &a));
    }

    #[test]
    fn ccd_examples() {
        let a = [Point3::new(0.0, 0.0, 0.0)];
        assert_eq!(ccd(&a, &a, 0.1).unwrap(), 0.0);
        let b = [Point3::new(0.05, 0.0, 0.0)];
        assert!((ccd(&a, &b, 0.1).unwrap() - 0.05).abs() < 1e-15);
        let far = [Point3::new(5.0, 0.0, 0.0)];
        assert_eq!(ccd(&a, &far, 0.1).unwrap(), 0.1);
        assert_eq!(ccd_discard(&a, &far, 0.1).unwrap(), None);
        assert!((ccd_discard(&a, &b, 0.1).unwrap().unwrap() - 0.05).abs() < 1e-15);
        assert!(ccd(&[], &a, 0.1).is_err());
        assert!(ccd(&a, &a, 0.0).is_err());
    }

    #[test]
    fn csv_row_matches_header() {
        let r = EvalRecord::evaluate(
            "p0",
            3,
            &[Point3::origin()],
            &[Point3::origin()],
            &RigidTransform::identity(),
            &RigidTransform::identity(),
            1.5,
        )
        .unwrap();
        assert_eq!(r.to_csv_row(), "p0,3,0,0,0,0,1.5");
        assert_eq!(EvalRecord::CSV_HEADER.split(',').count(), 7);
    }
}
