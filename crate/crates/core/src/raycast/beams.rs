use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, SphericalDirection};

/// One laser firing direction in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    pub direction: SphericalDirection,
    /// Laser (scan line) that fires this ray.
    pub beam_id: u32,
}

/// Explicit scan pattern: every ray the sensor fires in one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamTable {
    pub beams: Vec<Beam>,
    pub max_range: f64,
}

impl BeamTable {
    pub fn new(beams: Vec<Beam>, max_range: f64) -> Result<Self> {
        let t = Self { beams, max_range };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::invalid("beam table", format!("max_range must be positive, got {}", self.max_range)));
        }
        for (i, b) in self.beams.iter().enumerate() {
            b.direction
                .validate()
                .map_err(|e| Error::invalid("beam table", format!("ray {i}: {e}")))?;
        }
        Ok(())
    }

    /// Spinning-sensor pattern: one ray per (elevation, azimuth step) inside
    /// `[azimuth_start, azimuth_end)`. Beam ids are the positions in `elevations`
    /// unless `beam_ids` overrides them.
    pub fn spinning(
        elevations: &[f64],
        beam_ids: Option<&[u32]>,
        azimuth_resolution: f64,
        azimuth_start: f64,
        azimuth_end: f64,
        max_range: f64,
    ) -> Result<Self> {
        if !(azimuth_resolution > 0.0) || !(azimuth_end > azimuth_start) {
            return Err(Error::invalid(
                "beam table",
                "azimuth resolution must be positive and the azimuth range non-empty",
            ));
        }
        if let Some(ids) = beam_ids {
            if ids.len() != elevations.len() {
                return Err(Error::invalid("beam table", "one beam id per elevation is required"));
            }
        }
        let steps = ((azimuth_end - azimuth_start) / azimuth_resolution - 1e-9).ceil().max(0.0) as usize;
        let mut beams = Vec::with_capacity(steps * elevations.len());
        for (k, &elevation) in elevations.iter().enumerate() {
            let beam_id = beam_ids.map_or(k as u32, |ids| ids[k]);
            for s in 0..steps {
                let azimuth = normalize_angle(azimuth_start + s as f64 * azimuth_resolution);
                beams.push(Beam {
                    direction: SphericalDirection::new(azimuth, elevation)?,
                    beam_id,
                });
            }
        }
        Self::new(beams, max_range)
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn from_json(text: &str) -> serde_json::Result<Result<Self>> {
        let file: BeamTableFile = serde_json::from_str(text)?;
        Ok(file.into_table())
    }

    pub fn to_json(&self) -> String {
        let file = BeamTableFile {
            max_range: self.max_range,
            rays: self
                .beams
                .iter()
                .map(|b| RayEntry {
                    azimuth_deg: b.direction.azimuth.to_degrees(),
                    elevation_deg: b.direction.elevation.to_degrees(),
                    beam_id: Some(b.beam_id),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("beam tables always serialize")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))?
    }
}

/// On-disk beam table: `{"max_range": m, "rays": [{"azimuth_deg", "elevation_deg", "beam_id"?}]}`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeamTableFile {
    max_range: f64,
    rays: Vec<RayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RayEntry {
    azimuth_deg: f64,
    elevation_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beam_id: Option<u32>,
}

impl BeamTableFile {
    fn into_table(self) -> Result<BeamTable> {
        let beams = self
            .rays
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(Beam {
                    direction: SphericalDirection::new(
                        normalize_angle(r.azimuth_deg.to_radians()),
                        r.elevation_deg.to_radians(),
                    )?,
                    beam_id: r.beam_id.unwrap_or(i as u32),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        BeamTable::new(beams, self.max_range)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spinning_pattern_size_and_ids() {
        let els = [-0.1, 0.0, 0.1];
        let t = BeamTable::spinning(&els, None, 0.01, -0.5, 0.5, 50.0).unwrap();
        assert_eq!(t.len(), 300);
        assert_eq!(t.beams[150].beam_id, 1);
        let t = BeamTable::spinning(&els, Some(&[4, 8, 12]), 0.01, -0.5, 0.5, 50.0).unwrap();
        assert_eq!(t.beams[299].beam_id, 12);
    }

    #[test]
    fn full_circle_stays_half_open() {
        use std::f64::consts::PI;
        let t = BeamTable::spinning(&[0.0], None, 2.0 * PI / 8.0, -PI, PI, 10.0).unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.beams.iter().all(|b| b.direction.validate().is_ok()));
    }

    #[test]
    fn json_round_trip_keeps_directions() {
        let t = BeamTable::spinning(&[-0.2, 0.05], None, 0.3, -1.0, 1.0, 75.0).unwrap();
        let back = BeamTable::from_json(&t.to_json()).unwrap().unwrap();
        assert_eq!(back.len(), t.len());
        for (a, b) in t.beams.iter().zip(&back.beams) {
            assert!((a.direction.azimuth - b.direction.azimuth).abs() < 1e-12);
            assert_eq!(a.beam_id, b.beam_id);
        }
    }

    #[test]
    fn bare_ray_list_gets_sequential_ids() {
        let t = BeamTable::from_json(r#"{"max_range": 10, "rays": [{"azimuth_deg": 0, "elevation_deg": -5}, {"azimuth_deg": 90, "elevation_deg": 0}]}"#)
            .unwrap()
            .unwrap();
        assert_eq!(t.beams[1].beam_id, 1);
        assert!(BeamTable::from_json(r#"{"max_range": 10, "rays": [{"azimuth_deg": 0, "elevation_deg": 95}]}"#)
            .unwrap()
            .is_err());
    }
}
