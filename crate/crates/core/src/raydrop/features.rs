use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::raycast::{estimate_normals, SimulatedFrame};

/// Inputs of the return model for one ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayFeature {
    /// Range to the hit, meters.
    pub d: f64,
    /// Incidence angle between ray and surface normal, folded into `[0, π/2]`.
    pub theta: f64,
    /// Return intensity in `[0, 1]`.
    pub i: f64,
}

impl RayFeature {
    pub fn new(d: f64, theta: f64, i: f64) -> Result<Self> {
        let f = Self { d, theta, i };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::invalid("ray feature", format!("range must be positive, got {}", self.d)));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.theta) {
            return Err(Error::invalid("ray feature", format!("incidence {} outside [0, pi/2]", self.theta)));
        }
        if !(0.0..=1.0).contains(&self.i) {
            return Err(Error::invalid("ray feature", format!("intensity {} outside [0, 1]", self.i)));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.d, self.theta, self.i]
    }
}

/// Feature of a sensor-frame hit `p` on a surface with normal `n`; the ray is `p` itself.
///
/// `None` at the sensor origin or for a zero normal.
pub fn ray_feature(p: &Vector3<f64>, n: &Vector3<f64>, intensity: f64) -> Option<RayFeature> {
    let d = p.norm();
    let nn = n.norm();
    if !(d > 0.0) || !(nn > 0.0) {
        return None;
    }
    let cos = (p.dot(n).abs() / (d * nn)).min(1.0);
    Some(RayFeature {
        d,
        theta: cos.acos(),
        i: intensity.clamp(0.0, 1.0),
    })
}

/// Per-point features of a cloud; `None` where the normal is unusable.
#[derive(Debug, Clone, PartialEq)]
pub struct RayFeatures {
    pub features: Vec<Option<RayFeature>>,
    pub skipped: usize,
}

impl RayFeatures {
    pub fn valid(&self) -> Vec<RayFeature> {
        self.features.iter().flatten().copied().collect()
    }
}

/// Features of a sensor-frame cloud that carries normals.
///
/// Points whose `normal_valid` entry is false are skipped. A cloud without an
/// intensity channel reads as zero intensity.
pub fn ray_features(cloud: &PointCloud, normal_valid: Option<&[bool]>) -> Result<RayFeatures> {
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::invalid("ray features", "cloud has no normals"))?;
    let mut skipped = 0;
    let features = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let usable = normal_valid.is_none_or(|v| v[k]);
            let f = usable
                .then(|| ray_feature(p, &normals[k], cloud.intensity().map_or(0.0, |v| v[k])))
                .flatten();
            if f.is_none() {
                skipped += 1;
            }
            f
        })
        .collect();
    Ok(RayFeatures { features, skipped })
}

/// Estimates normals on the frame itself (sensor at the origin) and derives features.
///
/// Frames smaller than `normal_k` get no features at all.
pub fn frame_features(frame: &SimulatedFrame, normal_k: usize) -> Result<RayFeatures> {
    cloud_features(&frame.cloud, normal_k)
}

/// As [`frame_features`] for any sensor-frame cloud.
pub fn cloud_features(cloud: &PointCloud, normal_k: usize) -> Result<RayFeatures> {
    if cloud.len() < normal_k.max(3) {
        return Ok(RayFeatures {
            features: vec![None; cloud.len()],
            skipped: cloud.len(),
        });
    }
    let est = estimate_normals(cloud, normal_k, &Vector3::zeros())?;
    ray_features(&est.cloud, Some(&est.valid))
}
