use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compose::{compose_scene, Placement};
use super::sensor::NewSensorSpec;
use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_spherical, PointCloud};
use crate::ingest::{FrameRecord, SequenceDataset};
use crate::raycast::{raycast, Beam, BeamTable, RaycastConfig, RaycastMethod};
use crate::raydrop::{apply_raydrop, cloud_features, DropMode, RaydropModel};
use crate::reconstruct::ObjectAsset;

/// Beams this far outside the observed elevation band still count as covered.
pub const COVERAGE_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWarning {
    pub frame: usize,
    pub code: String,
    pub message: String,
}

/// Raydrop stage of a synthesis run.
#[derive(Debug, Clone)]
pub struct RaydropStage<'a> {
    pub model: &'a RaydropModel,
    /// Bernoulli seeds are offset by the frame index.
    pub mode: DropMode,
    pub normal_k: usize,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub dataset: SequenceDataset,
    pub warnings: Vec<SynthWarning>,
}

/// Elevation band `[min, max]` spanned by a sensor-frame cloud.
pub fn elevation_coverage(cloud: &PointCloud) -> Option<(f64, f64)> {
    cloud
        .points()
        .iter()
        .filter_map(|p| cartesian_to_spherical(p).ok())
        .fold(None, |acc, s| match acc {
            None => Some((s.elevation, s.elevation)),
            Some((lo, hi)) => Some((lo.min(s.elevation), hi.max(s.elevation))),
        })
}

/// Re-simulates every frame of `seq` for the sensor in `spec`.
///
/// Each frame's scene is the background plus the assets at that frame's
/// annotated poses. The new sensor sits at `frame pose ∘ mount`. Beams whose
/// direction, seen from the source sensor, leaves the elevation band the source
/// frame observed cannot be trusted and return nothing; a warning is logged.
///
/// `inserted` places extra assets at fixed global poses in every frame; their
/// boxes are appended to each frame's labels.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_dataset(
    seq: &SequenceDataset,
    background: &PointCloud,
    assets: &[ObjectAsset],
    inserted: &[Placement],
    spec: &NewSensorSpec,
    config: &RaycastConfig,
    raydrop: Option<&RaydropStage<'_>>,
) -> Result<SynthesisOutput> {
    seq.validate()?;
    config.validate()?;
    compose_scene(&PointCloud::default(), assets, inserted)?;
    let beams = spec.beam_table()?;
    let mount_inv = spec.mount.inverse();
    let outside_grid = beams
        .beams
        .iter()
        .filter(|b| config.bin_of(b.direction.azimuth, b.direction.elevation).is_none())
        .count();

    let frames: Vec<(FrameRecord, Vec<SynthWarning>)> = seq
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| synthesize_frame(i, f, background, assets, inserted, spec, config, &beams, &mount_inv, raydrop))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    if outside_grid > 0 {
        warnings.push(SynthWarning {
            frame: 0,
            code: "beam_outside_grid".into(),
            message: format!("{outside_grid} of {} beams fall outside the range-image field of view", beams.len()),
        });
    }
    let mut out_frames = Vec::with_capacity(frames.len());
    for (f, w) in frames {
        out_frames.push(f);
        warnings.extend(w);
    }
    Ok(SynthesisOutput {
        dataset: SequenceDataset {
            sequence_id: format!("{}-{}", seq.sequence_id, spec.name),
            sensor_name: spec.name.clone(),
            max_range: spec.max_range,
            frames: out_frames,
        },
        warnings,
    })
}

#[allow(clippy::too_many_arguments)]
fn synthesize_frame(
    i: usize,
    frame: &FrameRecord,
    background: &PointCloud,
    assets: &[ObjectAsset],
    inserted: &[Placement],
    spec: &NewSensorSpec,
    config: &RaycastConfig,
    beams: &BeamTable,
    mount_inv: &crate::geometry::RigidTransform,
    raydrop: Option<&RaydropStage<'_>>,
) -> Result<(FrameRecord, Vec<SynthWarning>)> {
    let mut warnings = Vec::new();
    let mut placements = Vec::new();
    for b in &frame.boxes {
        if assets.iter().any(|a| a.track_id == b.track_id) {
            placements.push(Placement {
                asset_id: b.track_id.clone(),
                pose: b.transformed(&frame.sensor_pose),
            });
        } else {
            warnings.push(SynthWarning {
                frame: i,
                code: "missing_asset".into(),
                message: format!("no asset for track {}; its points are absent", b.track_id),
            });
        }
    }
    placements.extend(inserted.iter().cloned());
    let (scene, _) = compose_scene(background, assets, &placements)?;

    // Directions are compared in the source sensor frame; the mount offset is ignored.
    let usable: Vec<Beam> = match elevation_coverage(&frame.cloud) {
        Some((lo, hi)) => {
            let (kept, dropped): (Vec<Beam>, Vec<Beam>) = beams.beams.iter().partition(|b| {
                let dir = spec.mount.apply_vector(&b.direction.unit_vector());
                let el = dir.z.clamp(-1.0, 1.0).asin();
                el >= lo - COVERAGE_SLACK && el <= hi + COVERAGE_SLACK
            });
            if !dropped.is_empty() {
                warnings.push(SynthWarning {
                    frame: i,
                    code: "fov_exceeds_source".into(),
                    message: format!(
                        "{} of {} beams leave the source elevation band [{:.3}, {:.3}] deg and return nothing",
                        dropped.len(),
                        beams.len(),
                        lo.to_degrees(),
                        hi.to_degrees()
                    ),
                });
            }
            kept
        }
        None => {
            warnings.push(SynthWarning {
                frame: i,
                code: "empty_source_frame".into(),
                message: "source frame has no points, so no coverage can be established".into(),
            });
            Vec::new()
        }
    };
    let keep_ids: Vec<usize> = {
        let mut j = 0;
        beams
            .beams
            .iter()
            .enumerate()
            .filter_map(|(k, b)| {
                if j < usable.len() && usable[j] == *b {
                    j += 1;
                    Some(k)
                } else {
                    None
                }
            })
            .collect()
    };
    let sub = BeamTable {
        beams: usable,
        max_range: beams.max_range,
    };
    let pose = frame.sensor_pose.compose(&spec.mount);
    let mut sim = raycast(&scene, &pose, &sub, config, RaycastMethod::FirstPeakAveraging)?;
    sim.ray_index = sim.ray_index.iter().map(|&r| keep_ids[r]).collect();
    let mut hit = vec![false; beams.len()];
    for &r in &sim.ray_index {
        hit[r] = true;
    }
    sim.hit = hit;

    if let Some(stage) = raydrop {
        let feats = cloud_features(&sim.cloud, stage.normal_k)?;
        let mode = match stage.mode {
            DropMode::Bernoulli { seed } => DropMode::Bernoulli {
                seed: seed.wrapping_add(i as u64),
            },
            m => m,
        };
        sim = apply_raydrop(&sim, &feats, stage.model, mode)?.0;
    }

    Ok((
        FrameRecord {
            timestamp_us: frame.timestamp_us,
            sensor_pose: pose,
            cloud: sim.cloud,
            boxes: frame
                .boxes
                .iter()
                .map(|b| b.transformed(mount_inv))
                .chain(inserted.iter().map(|p| p.pose.transformed(&pose.inverse())))
                .collect(),
        },
        warnings,
    ))
}

/// Writes warnings as JSON lines.
pub fn write_warnings(path: &Path, warnings: &[SynthWarning]) -> Result<()> {
    let mut text = String::new();
    for w in warnings {
        text.push_str(&serde_json::to_string(w).expect("warnings serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
