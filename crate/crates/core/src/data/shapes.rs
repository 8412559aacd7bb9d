//! Analytic surfaces used in place of CAD meshes. Every shape is centered at
//! the origin and scaled so its largest point norm is 1.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    Torus,
    Box,
    Composite,
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Ok(ShapeKind::Sphere),
            "torus" => Ok(ShapeKind::Torus),
            "box" => Ok(ShapeKind::Box),
            "composite" => Ok(ShapeKind::Composite),
            other => Err(invalid(format!("unknown shape `{other}`"))),
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::Box => "box",
            ShapeKind::Composite => "composite",
        };
        f.write_str(s)
    }
}

/// Half extents of the stand-alone box, before normalization.
pub const BOX_HALF_EXTENTS: [f64; 3] = [1.0, 0.7, 0.45];

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.4;

const COMPOSITE_BOX: [f64; 3] = [0.55, 0.35, 0.25];
const COMPOSITE_SPHERES: [([f64; 3], f64); 2] =
    [([0.45, 0.25, 0.2], 0.3), ([-0.5, -0.1, 0.3], 0.2)];

/// Uniform surface samples of `kind`, deterministic per seed.
pub fn sample_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(invalid("shape sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point3> = match kind {
        ShapeKind::Sphere => (0..n).map(|_| unit_sphere(&mut rng)).collect(),
        ShapeKind::Torus => {
            let scale = 1.0 / (TORUS_MAJOR + TORUS_MINOR);
            (0..n)
                .map(|_| Point3::from(torus(&mut rng, TORUS_MAJOR, TORUS_MINOR).coords * scale))
                .collect()
        }
        ShapeKind::Box => {
            let h = Vector3::from(BOX_HALF_EXTENTS);
            let scale = 1.0 / h.norm();
            (0..n)
                .map(|_| Point3::from(box_surface(&mut rng, &h).coords * scale))
                .collect()
        }
        ShapeKind::Composite => composite(&mut rng, n),
    };
    PointCloud::new(points)
}

fn unit_sphere(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let norm = v.norm();
        if norm > 1e-12 {
            return Point3::from(v / norm);
        }
    }
}

fn torus(rng: &mut ChaCha8Rng, major: f64, minor: f64) -> Point3 {
    // area element is proportional to major + minor·cos v
    loop {
        let u = 2.0 * PI * rng.random::<f64>();
        let v = 2.0 * PI * rng.random::<f64>();
        let accept = rng.random::<f64>() * (major + minor);
        if accept <= major + minor * v.cos() {
            let ring = major + minor * v.cos();
            return Point3::new(ring * u.cos(), ring * u.sin(), minor * v.sin());
        }
    }
}

fn box_surface(rng: &mut ChaCha8Rng, h: &Vector3<f64>) -> Point3 {
    let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut axis = 2;
    for (a, area) in areas.iter().enumerate() {
        if pick < *area {
            axis = a;
            break;
        }
        pick -= area;
    }
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut p = Vector3::zeros();
    for a in 0..3 {
        p[a] = if a == axis {
            sign * h[a]
        } else {
            (2.0 * rng.random::<f64>() - 1.0) * h[a]
        };
    }
    Point3::from(p)
}

fn composite(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    let h = Vector3::from(COMPOSITE_BOX);
    let box_area = 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
    let sphere_areas: Vec<f64> = COMPOSITE_SPHERES
        .iter()
        .map(|(_, r)| 4.0 * PI * r * r)
        .collect();
    let total = box_area + sphere_areas.iter().sum::<f64>();
    let max_radius = COMPOSITE_SPHERES
        .iter()
        .map(|(c, r)| Vector3::from(*c).norm() + r)
        .fold(h.norm(), f64::max);
    let scale = 1.0 / max_radius;
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let p = if pick < box_area {
                box_surface(rng, &h)
            } else {
                pick -= box_area;
                let k = if pick < sphere_areas[0] { 0 } else { 1 };
                let (c, r) = COMPOSITE_SPHERES[k];
                Point3::from(Vector3::from(c) + unit_sphere(rng).coords * r)
            };
            Point3::from(p.coords * scale)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_have_unit_norm() {
        let pc = sample_shape(ShapeKind::Sphere, 1000, 1).unwrap();
        assert_eq!(pc.len(), 1000);
        assert!(pc.points().iter().all(|p| (p.coords.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn same_seed_same_cloud() {
        for kind in [ShapeKind::Sphere, ShapeKind::Torus, ShapeKind::Box, ShapeKind::Composite] {
            assert_eq!(
                sample_shape(kind, 200, 9).unwrap(),
                sample_shape(kind, 200, 9).unwrap()
            );
            assert_ne!(
                sample_shape(kind, 200, 9).unwrap(),
                sample_shape(kind, 200, 10).unwrap()
            );
        }
    }

    #[test]
    fn box_points_lie_on_faces() {
        let h = Vector3::from(BOX_HALF_EXTENTS) / Vector3::from(BOX_HALF_EXTENTS).norm();
        let pc = sample_shape(ShapeKind::Box, 600, 4).unwrap();
        let mut per_face = [0usize; 6];
        for p in pc.points() {
            let faces: Vec<usize> = (0..3)
                .flat_map(|a| {
                    let mut hit = Vec::new();
                    if (p[a] - h[a]).abs() < 1e-12 {
                        hit.push(2 * a);
                    }
                    if (p[a] + h[a]).abs() < 1e-12 {
                        hit.push(2 * a + 1);
                    }
                    hit
                })
                .collect();
            assert_eq!(faces.len(), 1, "point {p:?} not on exactly one face");
            per_face[faces[0]] += 1;
            for a in 0..3 {
                assert!(p[a].abs() <= h[a] + 1e-12);
            }
        }
        assert!(per_face.iter().all(|&c| c > 0));
    }

    #[test]
    fn shapes_fit_in_the_unit_ball() {
        for kind in [ShapeKind::Torus, ShapeKind::Box, ShapeKind::Composite] {
            let pc = sample_shape(kind, 2000, 2).unwrap();
            let max = pc.points().iter().map(|p| p.coords.norm()).fold(0.0, f64::max);
            assert!(max <= 1.0 + 1e-12 && max > 0.9, "{kind}: max radius {max}");
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(sample_shape(ShapeKind::Sphere, 0, 0).is_err());
    }
}
