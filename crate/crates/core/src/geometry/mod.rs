//! Rigid transforms, point containers and the exact nearest-neighbor and
//! sampling primitives shared by the rest of the crate.

mod sampling;
mod spatial;
mod transform;

use nalgebra::{DMatrix, Vector3};

use crate::error::{invalid, Result};

pub use sampling::{farthest_point_sample, farthest_point_sample_from, farthest_point_sample_rows};
pub use spatial::{nearest_neighbor, squared_distance, KdTree, Neighbor};
pub use transform::{
    random_transform, wrap_deg, EulerAnglesDeg, RigidTransform, GIMBAL_LIMIT_DEG,
    ROTATION_TOLERANCE,
};

pub type Point3 = nalgebra::Point3<f64>;

/// An ordered, nonempty list of points with optional per-point feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    features: Option<DMatrix<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(invalid(format!("point {i} has non-finite coordinates")));
        }
        Ok(Self {
            points,
            features: None,
        })
    }

    /// Attaches an `N×d` feature matrix.
    pub fn with_features(mut self, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != self.points.len() {
            return Err(crate::Error::ShapeMismatch(format!(
                "{} feature rows for {} points",
                features.nrows(),
                self.points.len()
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(invalid("features contain non-finite entries"));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| Point3::from(*r)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false: clouds are nonempty by construction.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn features(&self) -> Option<&DMatrix<f64>> {
        self.features.as_ref()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn centroid(&self) -> Point3 {
        let sum: Vector3<f64> = self.points.iter().map(|p| p.coords).sum();
        Point3::from(sum / self.points.len() as f64)
    }

    /// Coordinates as an `N×3` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.points.len(), 3, |i, j| self.points[i][j])
    }

    /// Keeps the listed indices in the given order, features included.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let mut out = Self::new(points)?;
        if let Some(f) = &self.features {
            out.features = Some(f.select_rows(indices));
        }
        Ok(out)
    }

    pub(crate) fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            features: self.features.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn feature_rows_must_match() {
        let pc = PointCloud::from_rows(&[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(pc.clone().with_features(DMatrix::zeros(3, 4)).is_err());
        let pc = pc.with_features(DMatrix::from_element(2, 4, 1.5)).unwrap();
        let moved = RigidTransform::from_translation(Vector3::x()).apply(&pc);
        assert_eq!(moved.features(), pc.features());
    }
}
