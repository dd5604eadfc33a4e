use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use super::{Point3, PointCloud};
use crate::{Error, Result};

const ROTATION_TOL: f64 = 1e-9;

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "not orthonormal (max |RᵀR − I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!("determinant {det}")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Row-major rotation plus translation, as stored in transform files.
    pub fn from_rows(rows: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| rows[i][j]);
        Self::new(r, Vector3::from(translation))
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = match Unit::try_new(*axis, 1e-12) {
            Some(a) => *Rotation3::from_axis_angle(&a, angle).matrix(),
            None => Matrix3::identity(),
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_rows(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ]
    }

    pub fn transform_vector(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        Point3::from_vector(&self.transform_vector(&p.to_vector()))
    }

    /// Maps every point of `cloud`, preserving order and id.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud.points().iter().map(|p| self.apply_point(p)).collect();
        PointCloud {
            id: cloud.id().to_owned(),
            points,
        }
    }

    /// `self ∘ other`: applies `other` first.
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

    /// Geodesic angle (radians) between the two rotations.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        RigidTransform::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI), t)
    }

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_arrays("t", points).unwrap()
    }

    #[test]
    fn identity_leaves_cloud_unchanged() {
        let c = cloud(&[[1.0, 2.0, 3.0], [-4.0, 0.5, 9.0]]);
        assert_eq!(RigidTransform::identity().apply(&c), c);
    }

    #[test]
    fn pure_translation() {
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(t.apply_point(&Point3::new(0.0, 0.0, 0.0)), Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_axis_angle(&Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let p = t.apply_point(&Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_reflection_and_skew() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflect, Vector3::zeros()).is_err());
        let mut skew = Matrix3::identity();
        skew[(0, 1)] = 1e-6;
        assert!(RigidTransform::new(skew, Vector3::zeros()).is_err());
        assert!(RigidTransform::new(Matrix3::identity(), Vector3::zeros()).is_ok());
    }

    #[test]
    fn compose_with_identity_and_inverse_of_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_transform(&mut rng);
        assert_eq!(t.compose(&RigidTransform::identity()), t);
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
    }

    #[test]
    fn compose_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let p = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let lhs = a.compose(&b).apply_point(&p);
            let rhs = a.apply_point(&b.apply_point(&p));
            assert!(lhs.distance(&rhs) < 1e-9);
        }
    }

    #[test]
    fn inverse_round_trip_on_100_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_transform(&mut rng);
        let inv = t.inverse();
        for _ in 0..100 {
            let p = Point3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let back = inv.apply_point(&t.apply_point(&p));
            assert!(back.distance(&p) < 1e-9);
        }
        assert!(RigidTransform::new(*inv.rotation(), *inv.translation()).is_ok());
    }

    #[test]
    fn apply_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> = (0..50)
            .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        let c = cloud(&pts);
        let t = random_transform(&mut rng);
        let moved = t.apply(&c);
        for i in 0..c.len() {
            for j in 0..c.len() {
                let d0 = c[i].distance(&c[j]);
                let d1 = moved[i].distance(&moved[j]);
                assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
            }
        }
    }
}
