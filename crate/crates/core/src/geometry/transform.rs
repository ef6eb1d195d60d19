use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::PointCloud;
use crate::error::{Error, Result};

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Rigid SE(3) pose: `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|c| c.is_finite()) {
            return Err(Error::invalid("rigid transform", "non-finite entries"));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if gram_err > ORTHONORMAL_TOLERANCE {
            return Err(Error::invalid(
                "rigid transform",
                format!("rotation is not orthonormal (|R^T R - I| = {gram_err:e})"),
            ));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOLERANCE {
            return Err(Error::invalid("rigid transform", format!("det(R) = {det}")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about +z by `yaw` radians followed by `translation`.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        }
    }

    /// Rotation by the axis-angle vector `rotvec` followed by `translation`.
    pub fn from_rotation_vector(rotvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::new(rotvec).matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle of the rotation part, in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Heading of the rotated +x axis projected on the xy-plane.
    pub fn yaw(&self) -> f64 {
        let x = self.rotation.column(0);
        x[1].atan2(x[0])
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let last = m.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::invalid("rigid transform", "last row must be [0, 0, 0, 1]"));
        }
        Self::new(m.fixed_view::<3, 3>(0, 0).into_owned(), m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    /// Row-major 4×4 nested array, the on-disk pose representation.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self> {
        Self::from_matrix(&Matrix4::from_fn(|r, c| rows[r][c]))
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 4]; 4]>::deserialize(d)?;
        RigidTransform::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Maps every point by `transform` and rotates normals; other channels are copied.
pub fn transform_cloud(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    cloud.map_geometry(|p| transform.apply(p), |n| transform.apply_vector(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_leaves_cloud_bitwise_unchanged() {
        let cloud = PointCloud::from_points([[1.25, -3.5, 0.1], [1e-17, 7.0, -2.0]])
            .unwrap()
            .with_intensity(vec![0.3, 0.9])
            .unwrap();
        assert_eq!(transform_cloud(&cloud, &RigidTransform::identity()), cloud);
    }

    #[test]
    fn quarter_yaw_maps_x_to_y() {
        let cloud = PointCloud::from_points([[1.0, 0.0, 0.0]]).unwrap();
        let out = transform_cloud(&cloud, &RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros()));
        let p = out.points()[0];
        assert!((p - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn normals_are_rotated() {
        let cloud = PointCloud::from_points([[0.0, 0.0, 0.0]])
            .unwrap()
            .with_normals(vec![Vector3::x()])
            .unwrap();
        let t = RigidTransform::from_yaw(FRAC_PI_2, Vector3::new(5.0, 0.0, 0.0));
        let n = transform_cloud(&cloud, &t).normals().unwrap()[0];
        assert!((n - Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let t = RigidTransform::from_rotation_vector(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(t, back);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-100.0..100.0f64))
            .prop_map(|(r, t)| RigidTransform::from_rotation_vector(r.into(), t.into()))
    }

    proptest! {
        #[test]
        fn transform_then_inverse_round_trips(
            t in arb_transform(),
            pts in prop::collection::vec(prop::array::uniform3(-200.0..200.0f64), 1..64),
        ) {
            let cloud = PointCloud::from_points(pts).unwrap();
            let back = transform_cloud(&transform_cloud(&cloud, &t), &t.inverse());
            let max = cloud.points().iter().zip(back.points()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(max < 1e-9, "max displacement {max}");
        }

        #[test]
        fn generated_rotations_satisfy_invariants(t in arb_transform()) {
            prop_assert!(RigidTransform::new(*t.rotation(), *t.translation()).is_ok());
        }
    }
}
