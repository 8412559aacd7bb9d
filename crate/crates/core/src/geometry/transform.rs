use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud};
use crate::error::{invalid, Result};

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A rigid motion `x -> R x + t` with `R` in SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRepr", try_from = "TransformRepr")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Wire format: rotation as 9 row-major floats, translation as 3 floats.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransformRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        TransformRepr {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = crate::Error;

    fn try_from(repr: TransformRepr) -> Result<Self> {
        RigidTransform::new(
            Matrix3::from_row_slice(&repr.rotation),
            Vector3::from(repr.translation),
        )
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting matrices that are not proper rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(invalid("translation has non-finite entries"));
        }
        if !t.is_proper(ROTATION_TOLERANCE) {
            return Err(invalid(format!(
                "matrix is not a proper rotation (orthogonality error {:.3e}, det {:.12})",
                t.orthogonality_error(),
                rotation.determinant()
            )));
        }
        Ok(t)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle_rad` about `axis` (normalized internally), zero translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self {
            rotation: *nalgebra::Rotation3::from_axis_angle(&axis, angle_rad).matrix(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_euler_deg(angles: EulerAnglesDeg, translation: Vector3<f64>) -> Self {
        Self {
            rotation: angles.to_rotation(),
            translation,
        }
    }

    /// Max-abs entry of `RᵀR − I`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.orthogonality_error() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Transforms every point; features are carried over unchanged.
    pub fn apply(&self, pc: &PointCloud) -> PointCloud {
        pc.map_points(|p| self.apply_point(p))
    }

    /// `self ∘ other`, i.e. `other` is applied first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn euler_deg(&self) -> EulerAnglesDeg {
        EulerAnglesDeg::from_rotation(&self.rotation)
    }

    /// Angle of the relative rotation `selfᵀ·other`, in degrees.
    pub fn geodesic_deg(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    /// Row-major rotation entries followed by the translation.
    pub fn to_row_major(&self) -> [f64; 12] {
        let repr = TransformRepr::from(*self);
        let mut out = [0.0; 12];
        out[..9].copy_from_slice(&repr.rotation);
        out[9..].copy_from_slice(&repr.translation);
        out
    }
}

/// Intrinsic Z-Y-X Euler angles in degrees: `R = Rz(rz)·Ry(ry)·Rx(rx)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAnglesDeg {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

/// `|ry|` beyond which Euler extraction is considered near gimbal lock.
pub const GIMBAL_LIMIT_DEG: f64 = 89.9;

impl EulerAnglesDeg {
    pub fn new(rx: f64, ry: f64, rz: f64) -> Self {
        Self { rx, ry, rz }
    }

    pub fn to_rotation(&self) -> Matrix3<f64> {
        let (sx, cx) = self.rx.to_radians().sin_cos();
        let (sy, cy) = self.ry.to_radians().sin_cos();
        let (sz, cz) = self.rz.to_radians().sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
        let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
        rz * ry * rx
    }

    pub fn from_rotation(r: &Matrix3<f64>) -> Self {
        let ry = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let rz = r[(1, 0)].atan2(r[(0, 0)]);
        let rx = r[(2, 1)].atan2(r[(2, 2)]);
        Self {
            rx: wrap_deg(rx.to_degrees()),
            ry: wrap_deg(ry.to_degrees()),
            rz: wrap_deg(rz.to_degrees()),
        }
    }

    pub fn near_gimbal_lock(&self) -> bool {
        self.ry.abs() > GIMBAL_LIMIT_DEG
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.rx, self.ry, self.rz]
    }
}

/// Maps an angle in degrees into `(-180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    let mut w = a % 360.0;
    if w <= -180.0 {
        w += 360.0;
    } else if w > 180.0 {
        w -= 360.0;
    }
    w
}

/// Seeded random rigid motion: each Euler angle uniform in `[0, rot_max_deg]`,
/// each translation component uniform in `[-trans_max, trans_max]`.
pub fn random_transform(seed: u64, rot_max_deg: f64, trans_max: f64) -> Result<RigidTransform> {
    if !(0.0..180.0).contains(&rot_max_deg) {
        return Err(invalid(format!(
            "rot_max_deg must lie in [0, 180), got {rot_max_deg}"
        )));
    }
    if !(trans_max >= 0.0 && trans_max.is_finite()) {
        return Err(invalid(format!("trans_max must be >= 0, got {trans_max}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut angle = || rng.random::<f64>() * rot_max_deg;
    let angles = EulerAnglesDeg::new(angle(), angle(), angle());
    let mut trans = || (2.0 * rng.random::<f64>() - 1.0) * trans_max;
    let translation = Vector3::new(trans(), trans(), trans());
    Ok(RigidTransform::from_euler_deg(angles, translation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let p = t.apply_point(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn identity_leaves_cloud_unchanged() {
        let pc = PointCloud::new(vec![Point3::new(1.0, -2.0, 0.5), Point3::new(0.0, 3.0, 1.0)])
            .unwrap();
        assert_eq!(RigidTransform::identity().apply(&pc), pc);
    }

    #[test]
    fn two_eighth_turns_make_a_quarter_turn() {
        let a = RigidTransform::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_4);
        let c = a.compose(&a);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rz45 = Matrix3::new(s, -s, 0.0, s, s, 0.0, 0.0, 0.0, 1.0);
        let expected = rz45 * rz45;
        assert_relative_eq!(c.rotation, expected, epsilon = 1e-15);
        assert_relative_eq!(
            c.rotation,
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn inverse_of_translation() {
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(t.inverse().translation, Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let a = random_transform(11, 45.0, 0.5).unwrap();
        assert_eq!(RigidTransform::identity().compose(&a), a);
        let id = a.compose(&a.inverse());
        assert_relative_eq!(id.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn random_transform_zero_ranges_is_identity() {
        let t = random_transform(3, 0.0, 0.0).unwrap();
        assert_eq!(t, RigidTransform::identity());
    }

    #[test]
    fn random_transform_is_deterministic_and_bounded() {
        assert_eq!(
            random_transform(5, 45.0, 0.5).unwrap(),
            random_transform(5, 45.0, 0.5).unwrap()
        );
        for seed in 0..1000 {
            let t = random_transform(seed, 45.0, 0.5).unwrap();
            let e = t.euler_deg();
            for a in e.as_array() {
                assert!((-1e-9..=45.0 + 1e-9).contains(&a), "seed {seed}: {e:?}");
            }
            assert!(t.translation.amax() <= 0.5);
            assert!(t.is_proper(ROTATION_TOLERANCE));
        }
    }

    #[test]
    fn random_transform_rejects_bad_range() {
        assert!(random_transform(0, 180.0, 0.1).is_err());
        assert!(random_transform(0, -1.0, 0.1).is_err());
        assert!(random_transform(0, 10.0, -0.1).is_err());
    }

    #[test]
    fn new_rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn json_round_trip_uses_row_major() {
        let t = random_transform(9, 30.0, 0.3).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["rotation"][1].as_f64().unwrap(), t.rotation[(0, 1)]);
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn euler_round_trip(rx in -179.9f64..180.0, ry in -89.8f64..89.8, rz in -179.9f64..180.0) {
            let e = EulerAnglesDeg::new(rx, ry, rz);
            let back = EulerAnglesDeg::from_rotation(&e.to_rotation());
            prop_assert!((back.rx - rx).abs() < 1e-9);
            prop_assert!((back.ry - ry).abs() < 1e-9);
            prop_assert!((back.rz - rz).abs() < 1e-9);
        }

        #[test]
        fn inverse_twice_is_original(seed in 0u64..10_000) {
            let t = random_transform(seed, 90.0, 1.0).unwrap();
            let back = t.inverse().inverse();
            prop_assert!((back.rotation - t.rotation).amax() < 1e-12);
            prop_assert!((back.translation - t.translation).amax() < 1e-12);
        }

        #[test]
        fn apply_then_invert_restores_points(seed in 0u64..10_000, x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let t = random_transform(seed, 170.0, 2.0).unwrap();
            let p = Point3::new(x, y, z);
            let q = t.inverse().apply_point(&t.apply_point(&p));
            prop_assert!((q - p).amax() < 1e-12);
        }

        #[test]
        fn rigid_motion_preserves_distances(seed in 0u64..10_000, a in prop::array::uniform3(-3.0f64..3.0), b in prop::array::uniform3(-3.0f64..3.0)) {
            let t = random_transform(seed, 179.0, 5.0).unwrap();
            let (pa, pb) = (Point3::from(a), Point3::from(b));
            let d0 = (pa - pb).norm();
            let d1 = (t.apply_point(&pa) - t.apply_point(&pb)).norm();
            prop_assert!((d0 - d1).abs() < 1e-10);
        }
    }
}
