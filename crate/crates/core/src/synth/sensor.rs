use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::raycast::BeamTable;

/// A spinning sensor to simulate. Angles are radians.
#[derive(Debug, Clone, PartialEq)]
pub struct NewSensorSpec {
    pub name: String,
    /// Strictly increasing.
    pub elevations: Vec<f64>,
    /// Laser id per elevation; positions in `elevations` when absent.
    pub beam_ids: Option<Vec<u32>>,
    pub azimuth_resolution: f64,
    /// Half-open `[start, end)`.
    pub azimuth_fov: [f64; 2],
    pub max_range: f64,
    /// New sensor → source sensor frame.
    pub mount: RigidTransform,
}

/// JSON form, angles in degrees.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(default = "default_name")]
    name: String,
    elevations_deg: Vec<f64>,
    #[serde(default)]
    beam_ids: Option<Vec<u32>>,
    azimuth_resolution_deg: f64,
    #[serde(default = "full_turn")]
    azimuth_fov_deg: [f64; 2],
    max_range: f64,
    #[serde(default = "RigidTransform::identity")]
    mount: RigidTransform,
}

fn default_name() -> String {
    "synthetic".into()
}

fn full_turn() -> [f64; 2] {
    [-180.0, 180.0]
}

impl NewSensorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Error::invalid("sensor spec", why);
        if self.elevations.is_empty() {
            return Err(bad("at least one beam elevation is required".into()));
        }
        if self.elevations.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(bad("elevations must be strictly increasing".into()));
        }
        if self.elevations.iter().any(|e| !(-FRAC_PI_2..=FRAC_PI_2).contains(e)) {
            return Err(bad("elevations must lie within [-90, 90] degrees".into()));
        }
        if let Some(ids) = &self.beam_ids {
            if ids.len() != self.elevations.len() {
                return Err(bad(format!("{} beam ids for {} elevations", ids.len(), self.elevations.len())));
            }
        }
        if !(self.azimuth_resolution > 0.0) {
            return Err(bad(format!("azimuth resolution must be positive, got {}", self.azimuth_resolution)));
        }
        if !(self.azimuth_fov[0] < self.azimuth_fov[1]) || self.azimuth_fov[1] - self.azimuth_fov[0] > std::f64::consts::TAU + 1e-9 {
            return Err(bad(format!("azimuth fov {:?} must be increasing and at most one turn", self.azimuth_fov)));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(bad(format!("max_range must be positive, got {}", self.max_range)));
        }
        Ok(())
    }

    /// One ray per (elevation, azimuth step) inside the azimuth FOV.
    pub fn beam_table(&self) -> Result<BeamTable> {
        self.validate()?;
        BeamTable::spinning(
            &self.elevations,
            self.beam_ids.as_deref(),
            self.azimuth_resolution,
            self.azimuth_fov[0],
            self.azimuth_fov[1],
            self.max_range,
        )
    }

    /// The beam ids the spec fires, in elevation order.
    pub fn fired_beam_ids(&self) -> Vec<u32> {
        match &self.beam_ids {
            Some(ids) => ids.clone(),
            None => (0..self.elevations.len() as u32).collect(),
        }
    }

    pub fn from_json(text: &str) -> serde_json::Result<Result<Self>> {
        let f: SpecFile = serde_json::from_str(text)?;
        let spec = NewSensorSpec {
            name: f.name,
            elevations: f.elevations_deg.iter().map(|d| d.to_radians()).collect(),
            beam_ids: f.beam_ids,
            azimuth_resolution: f.azimuth_resolution_deg.to_radians(),
            azimuth_fov: f.azimuth_fov_deg.map(f64::to_radians),
            max_range: f.max_range,
            mount: f.mount,
        };
        Ok(spec.validate().map(|_| spec))
    }

    pub fn to_json(&self) -> String {
        let f = SpecFile {
            name: self.name.clone(),
            elevations_deg: self.elevations.iter().map(|r| r.to_degrees()).collect(),
            beam_ids: self.beam_ids.clone(),
            azimuth_resolution_deg: self.azimuth_resolution.to_degrees(),
            azimuth_fov_deg: self.azimuth_fov.map(f64::to_degrees),
            max_range: self.max_range,
            mount: self.mount,
        };
        serde_json::to_string_pretty(&f).expect("specs serialize")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))?
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_in_degrees() {
        let s = NewSensorSpec::from_json(r#"{"elevations_deg": [-10, 0, 5], "azimuth_resolution_deg": 1.0, "max_range": 75}"#)
            .unwrap()
            .unwrap();
        assert_eq!(s.beam_table().unwrap().len(), 3 * 360);
        assert_eq!(s.fired_beam_ids(), vec![0, 1, 2]);
        let back = NewSensorSpec::from_json(&s.to_json()).unwrap().unwrap();
        assert_eq!(back.elevations.len(), 3);
    }

    #[test]
    fn unsorted_elevations_are_rejected() {
        assert!(NewSensorSpec::from_json(r#"{"elevations_deg": [0, -10], "azimuth_resolution_deg": 1.0, "max_range": 75}"#)
            .unwrap()
            .is_err());
    }
}
