use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{PointCloud, RigidTransform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Vehicle,
    Pedestrian,
    Cyclist,
    Other,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Vehicle,
        ClassLabel::Pedestrian,
        ClassLabel::Cyclist,
        ClassLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Vehicle => "vehicle",
            ClassLabel::Pedestrian => "pedestrian",
            ClassLabel::Cyclist => "cyclist",
            ClassLabel::Other => "other",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid("class label", format!("unknown class {s:?}")))
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to TAU for tiny negative inputs.
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Yaw-only 3D box: center, (length, width, height) along the box x/y/z axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3 {
    pub center: Vector3<f64>,
    pub dims: Vector3<f64>,
    pub yaw: f64,
    pub track_id: String,
    pub class_label: ClassLabel,
}

impl OrientedBox3 {
    pub fn new(
        center: Vector3<f64>,
        dims: Vector3<f64>,
        yaw: f64,
        track_id: impl Into<String>,
        class_label: ClassLabel,
    ) -> Result<Self> {
        let b = Self {
            center,
            dims,
            yaw: normalize_angle(yaw),
            track_id: track_id.into(),
            class_label,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.iter().all(|c| c.is_finite()) || !self.yaw.is_finite() {
            return Err(Error::invalid("box", format!("{}: non-finite pose", self.track_id)));
        }
        if !self.dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            return Err(Error::invalid(
                "box",
                format!("{}: dims must be strictly positive, got {:?}", self.track_id, self.dims.as_slice()),
            ));
        }
        if !(-PI..PI).contains(&self.yaw) {
            return Err(Error::invalid("box", format!("{}: yaw {} outside [-pi, pi)", self.track_id, self.yaw)));
        }
        Ok(())
    }

    /// Box pose as a transform from the box frame to the frame the box lives in.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw, self.center)
    }

    /// Coordinates of `p` in the box frame.
    pub fn to_box_frame(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn contains(&self, p: &Vector3<f64>, enlargement: &Vector3<f64>) -> bool {
        let q = self.to_box_frame(p);
        (0..3).all(|k| q[k].abs() <= (self.dims[k] + enlargement[k]) / 2.0)
    }

    /// Radius of the sphere around `center` that encloses the enlarged box.
    pub fn bounding_radius(&self, enlargement: &Vector3<f64>) -> f64 {
        ((self.dims + enlargement) / 2.0).norm()
    }

    /// The same physical box expressed after `transform`. Only the heading
    /// survives, so transforms with roll or pitch lose that part.
    pub fn transformed(&self, transform: &RigidTransform) -> OrientedBox3 {
        let heading = transform.apply_vector(&Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0));
        OrientedBox3 {
            center: transform.apply(&self.center),
            dims: self.dims,
            yaw: normalize_angle(heading.y.atan2(heading.x)),
            track_id: self.track_id.clone(),
            class_label: self.class_label,
        }
    }

    /// A copy centered at the origin with zero yaw.
    pub fn canonical(&self) -> OrientedBox3 {
        OrientedBox3 {
            center: Vector3::zeros(),
            yaw: 0.0,
            ..self.clone()
        }
    }
}

/// Splits `cloud` into the points inside the enlarged box and the rest.
///
/// A point is inside when, in the box frame, `|p_k| <= (dims_k + enlargement_k) / 2`
/// on every axis.
pub fn crop_by_box(
    cloud: &PointCloud,
    bbox: &OrientedBox3,
    enlargement: &Vector3<f64>,
) -> Result<(PointCloud, PointCloud)> {
    if !enlargement.iter().all(|e| *e >= 0.0) {
        return Err(Error::Domain(format!(
            "enlargement must be non-negative, got {:?}",
            enlargement.as_slice()
        )));
    }
    let mask: Vec<bool> = cloud.points().iter().map(|p| bbox.contains(p, enlargement)).collect();
    Ok(cloud.partition(&mask))
}
