//! Overlap-guided Gaussian mixture registration of partially overlapping
//! point clouds.
//!
//! The pipeline encodes both clouds with rigid-invariant features, refines
//! them with clustered self- and cross-attention, predicts per-point overlap
//! scores, fits overlap-weighted Gaussian mixtures to each cloud, matches the
//! mixture components with entropic optimal transport and recovers the rigid
//! transform in closed form with a weighted SVD.

pub mod attention;
pub mod clustering;
pub mod data;
pub mod error;
pub mod features;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod registration;
mod serde_rows;

pub use error::{Error, Result};
pub use geometry::{EulerAnglesDeg, Point3, PointCloud, RigidTransform};
pub use registration::{register, register_pair, RegistrationConfig, RegistrationResult};
