//! Points, clouds, rigid transforms and nearest-neighbour indexing.

mod kdtree;
mod transform;

pub use kdtree::NeighborIndex;
pub use transform::RigidTransform;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        dist2(&self.to_array(), &other.to_array()).sqrt()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Squared Euclidean distance. Every distance comparison in the crate goes
/// through this function so that ranks computed by different routes agree
/// bit for bit.
#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// An ordered set of 3D points. Point `i` keeps index `i` for the lifetime
/// of the cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    id: String,
    points: Vec<Point3>,
}

impl PointCloud {
    /// Builds a cloud, rejecting any non-finite coordinate.
    pub fn new(id: impl Into<String>, points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            id: id.into(),
            points,
        })
    }

    pub fn from_arrays(id: impl Into<String>, coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(id, coords.iter().copied().map(Point3::from).collect())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<Point3> {
        self.points.get(i).copied().ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.points.len(),
        })
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}

impl std::ops::Index<usize> for PointCloud {
    type Output = Point3;

    fn index(&self, i: usize) -> &Point3 {
        &self.points[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = PointCloud::new("c", vec![Point3::new(0.0, 0.0, 0.0), Point3::new(f64::NAN, 0.0, 0.0)]);
        assert!(matches!(err, Err(Error::NonFinite(1))));
        let err = PointCloud::new("c", vec![Point3::new(0.0, f64::INFINITY, 0.0)]);
        assert!(matches!(err, Err(Error::NonFinite(0))));
    }

    #[test]
    fn empty_cloud_is_allowed() {
        let c = PointCloud::new("empty", vec![]).unwrap();
        assert!(c.is_empty());
        assert!(c.get(0).is_err());
    }
}
