use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filter::{radius_outlier_removal, voxel_downsample};
use super::objects::EnlargementPolicy;
use crate::error::{Error, Result};
use crate::geometry::{transform_cloud, OrientedBox3, PointCloud};
use crate::ingest::{lfpc, FrameRecord, SequenceDataset};
use crate::spatial::PointIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundParams {
    pub voxel: f64,
    pub outlier_radius: f64,
    pub min_neighbors: usize,
    /// Tracks whose centers move farther than this are dynamic.
    pub movement_threshold: f64,
    /// Per-axis growth of dynamic boxes before cropping.
    pub dynamic_enlargement: f64,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self {
            voxel: 0.05,
            outlier_radius: 0.3,
            min_neighbors: 3,
            movement_threshold: 0.5,
            dynamic_enlargement: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundProvenance {
    pub sequence_id: String,
    pub frames: usize,
    pub params: BackgroundParams,
    pub dynamic_tracks: Vec<String>,
    pub accumulated_points: usize,
    pub downsampled_points: usize,
    pub filtered_points: usize,
    /// Points removed by the final check against every enlarged box.
    pub recropped_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMap {
    /// Global frame.
    pub cloud: PointCloud,
    pub provenance: BackgroundProvenance,
}

/// The frame's points outside every box, each box grown as the policy says.
pub fn remove_foreground(frame: &FrameRecord, policy: &EnlargementPolicy) -> PointCloud {
    let enlargements: Vec<Vector3<f64>> = frame.boxes.iter().map(|b| policy.enlargement_for(&b.track_id)).collect();
    let mask: Vec<bool> = frame
        .cloud
        .points()
        .iter()
        .map(|p| !frame.boxes.iter().zip(&enlargements).any(|(b, e)| b.contains(p, e)))
        .collect();
    frame.cloud.partition(&mask).0
}

/// Mask of points outside every `(box, enlargement)` pair.
fn outside_all(cloud: &PointCloud, boxes: &[(OrientedBox3, Vector3<f64>)]) -> Vec<bool> {
    let mut keep = vec![true; cloud.len()];
    if boxes.is_empty() || cloud.is_empty() {
        return keep;
    }
    let index = PointIndex::new(cloud.points());
    for (b, e) in boxes {
        for i in index.within(&b.center, b.bounding_radius(e)) {
            if keep[i] && b.contains(&cloud.points()[i], e) {
                keep[i] = false;
            }
        }
    }
    keep
}

/// Builds the static map of a sequence in the global frame.
///
/// Foreground is removed per frame, the remainder is moved to the global frame,
/// concatenated in frame order, voxel-downsampled and outlier-filtered. Finally
/// every point that falls into any enlarged box of any frame is discarded, as
/// averaging may pull centroids into a box.
pub fn accumulate_background(seq: &SequenceDataset, params: &BackgroundParams) -> Result<BackgroundMap> {
    seq.validate()?;
    let policy = EnlargementPolicy::for_sequence(seq, params.movement_threshold, params.dynamic_enlargement);
    let parts: Vec<PointCloud> = seq
        .frames
        .par_iter()
        .map(|f| transform_cloud(&remove_foreground(f, &policy), &f.sensor_pose))
        .collect();
    let accumulated = PointCloud::concat(parts.iter());
    let accumulated_points = accumulated.len();
    let down = voxel_downsample(&accumulated, params.voxel)?;
    let downsampled_points = down.len();
    let filtered = radius_outlier_removal(&down, params.outlier_radius, params.min_neighbors)?;
    let filtered_points = filtered.len();

    let global_boxes: Vec<(OrientedBox3, Vector3<f64>)> = seq
        .frames
        .iter()
        .flat_map(|f| {
            f.boxes
                .iter()
                .map(|b| (b.transformed(&f.sensor_pose), policy.enlargement_for(&b.track_id)))
        })
        .collect();
    let (cloud, _) = filtered.partition(&outside_all(&filtered, &global_boxes));
    if cloud.is_empty() {
        return Err(Error::EmptyMap);
    }
    Ok(BackgroundMap {
        provenance: BackgroundProvenance {
            sequence_id: seq.sequence_id.clone(),
            frames: seq.frames.len(),
            params: *params,
            dynamic_tracks: policy.dynamic_tracks.iter().cloned().collect(),
            accumulated_points,
            downsampled_points,
            filtered_points,
            recropped_points: filtered_points - cloud.len(),
        },
        cloud,
    })
}

/// Every global-frame point of `map` that lies in an enlarged box of `seq`.
pub fn foreground_violations(map: &PointCloud, seq: &SequenceDataset, params: &BackgroundParams) -> usize {
    let policy = EnlargementPolicy::for_sequence(seq, params.movement_threshold, params.dynamic_enlargement);
    map.points()
        .iter()
        .filter(|p| {
            seq.frames.iter().any(|f| {
                f.boxes
                    .iter()
                    .any(|b| b.transformed(&f.sensor_pose).contains(p, &policy.enlargement_for(&b.track_id)))
            })
        })
        .count()
}

/// Writes `<stem>.lfpc` and `<stem>.json` (provenance).
pub fn write_background(map: &BackgroundMap, cloud_path: &Path, provenance_path: &Path) -> Result<()> {
    fs::write(cloud_path, lfpc::encode(&map.cloud)).map_err(|e| Error::io(cloud_path, e))?;
    let text = serde_json::to_string_pretty(&map.provenance).expect("provenance serializes");
    fs::write(provenance_path, text).map_err(|e| Error::io(provenance_path, e))
}
