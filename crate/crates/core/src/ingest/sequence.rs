//! Sequence manifests, per-frame poses and JSON-lines box labels.
//!
//! ```text
//! <dir>/manifest.json      {"sequence_id", "sensor_name", "max_range", "labels", "frames": [...]}
//! <dir>/clouds/000000.lfpc one cloud per frame (LFPC or ASCII PLY), sensor frame
//! <dir>/poses/000000.json  sensor→global pose as a row-major 4×4 matrix
//! <dir>/labels.jsonl       {"frame", "track_id", "class", "center", "dims", "yaw"} per line
//! ```
//!
//! Paths inside the manifest are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{read_cloud, write_cloud, CloudFormat};
use crate::error::{Error, Result};
use crate::geometry::{ClassLabel, OrientedBox3, PointCloud, RigidTransform};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One sweep: the cloud and boxes are in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp_us: i64,
    /// Sensor → global.
    pub sensor_pose: RigidTransform,
    pub cloud: PointCloud,
    pub boxes: Vec<OrientedBox3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequence_id: String,
    pub sensor_name: String,
    pub max_range: f64,
    pub frames: Vec<FrameRecord>,
}

impl SequenceDataset {
    /// Checks sequence-level invariants, naming the first offending frame.
    pub fn validate(&self) -> Result<()> {
        let fail = |frame: Option<usize>, reason: String| Error::Load {
            frame,
            path: None,
            reason,
        };
        if self.frames.is_empty() {
            return Err(fail(None, "sequence has no frames".into()));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(fail(None, format!("max_range must be positive, got {}", self.max_range)));
        }
        let schema = self.frames[0].cloud.schema();
        for (i, f) in self.frames.iter().enumerate() {
            if i > 0 && f.timestamp_us <= self.frames[i - 1].timestamp_us {
                return Err(fail(
                    Some(i),
                    format!(
                        "timestamp {} does not increase over {}",
                        f.timestamp_us,
                        self.frames[i - 1].timestamp_us
                    ),
                ));
            }
            RigidTransform::new(*f.sensor_pose.rotation(), *f.sensor_pose.translation())
                .map_err(|e| fail(Some(i), e.to_string()))?;
            f.cloud.validate().map_err(|e| fail(Some(i), e.to_string()))?;
            if f.cloud.schema() != schema {
                return Err(fail(
                    Some(i),
                    format!("channel schema {:?} differs from frame 0 {:?}", f.cloud.schema(), schema),
                ));
            }
            for b in &f.boxes {
                b.validate().map_err(|e| fail(Some(i), e.to_string()))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default = "default_sequence_id")]
    sequence_id: String,
    sensor_name: String,
    max_range: f64,
    #[serde(default)]
    labels: Option<String>,
    frames: Vec<ManifestFrame>,
}

fn default_sequence_id() -> String {
    "sequence".into()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFrame {
    timestamp_us: i64,
    cloud: String,
    pose: String,
}

/// One line of `labels.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub frame: usize,
    pub track_id: String,
    pub class: ClassLabel,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl LabelRecord {
    pub fn from_box(frame: usize, b: &OrientedBox3) -> Self {
        Self {
            frame,
            track_id: b.track_id.clone(),
            class: b.class_label,
            center: b.center.into(),
            dims: b.dims.into(),
            yaw: b.yaw,
        }
    }

    pub fn to_box(&self) -> Result<OrientedBox3> {
        OrientedBox3::new(
            Vector3::from(self.center),
            Vector3::from(self.dims),
            self.yaw,
            self.track_id.clone(),
            self.class,
        )
    }
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(line).map_err(|e| Error::Load {
            frame: None,
            path: Some(path.to_path_buf()),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[LabelRecord]) -> Result<()> {
    let mut text = String::new();
    for l in labels {
        text.push_str(&serde_json::to_string(l).expect("label records always serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_pose(path: &Path) -> Result<RigidTransform> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_pose(path: &Path, pose: &RigidTransform) -> Result<()> {
    let text = serde_json::to_string(pose).expect("poses always serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads and validates the sequence described by `manifest_path`.
pub fn read_sequence(manifest_path: &Path) -> Result<SequenceDataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::Load {
        frame: None,
        path: Some(manifest_path.to_path_buf()),
        reason: format!("cannot read manifest: {e}"),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Load {
        frame: None,
        path: Some(manifest_path.to_path_buf()),
        reason: format!("malformed manifest: {e}"),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (i, entry) in manifest.frames.iter().enumerate() {
        let frame_err = |path: PathBuf, e: Error| Error::Load {
            frame: Some(i),
            path: Some(path),
            reason: e.to_string(),
        };
        let cloud_path = base.join(&entry.cloud);
        let cloud = read_cloud(&cloud_path).map_err(|e| frame_err(cloud_path.clone(), e))?;
        let pose_path = base.join(&entry.pose);
        let sensor_pose = read_pose(&pose_path).map_err(|e| frame_err(pose_path.clone(), e))?;
        frames.push(FrameRecord {
            timestamp_us: entry.timestamp_us,
            sensor_pose,
            cloud,
            boxes: Vec::new(),
        });
    }

    if let Some(labels) = &manifest.labels {
        let path = base.join(labels);
        for rec in read_labels(&path)? {
            let frame = rec.frame;
            let b = rec.to_box().map_err(|e| Error::Load {
                frame: Some(frame),
                path: Some(path.clone()),
                reason: e.to_string(),
            })?;
            frames
                .get_mut(frame)
                .ok_or_else(|| Error::Load {
                    frame: Some(frame),
                    path: Some(path.clone()),
                    reason: format!("label references frame {frame} but the sequence has {} frames", manifest.frames.len()),
                })?
                .boxes
                .push(b);
        }
    }

    let seq = SequenceDataset {
        sequence_id: manifest.sequence_id,
        sensor_name: manifest.sensor_name,
        max_range: manifest.max_range,
        frames,
    };
    seq.validate().map_err(|e| match e {
        Error::Load { frame, reason, .. } => Error::Load {
            frame,
            path: Some(manifest_path.to_path_buf()),
            reason,
        },
        other => other,
    })?;
    Ok(seq)
}

/// Writes `seq` under `dir` and returns the manifest path.
pub fn write_sequence(seq: &SequenceDataset, dir: &Path, format: CloudFormat) -> Result<PathBuf> {
    seq.validate()?;
    for sub in ["clouds", "poses"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut entries = Vec::with_capacity(seq.frames.len());
    let mut labels = Vec::new();
    for (i, f) in seq.frames.iter().enumerate() {
        let cloud = format!("clouds/{i:06}.{}", format.extension());
        let pose = format!("poses/{i:06}.json");
        write_cloud(&f.cloud, &dir.join(&cloud), format)?;
        write_pose(&dir.join(&pose), &f.sensor_pose)?;
        labels.extend(f.boxes.iter().map(|b| LabelRecord::from_box(i, b)));
        entries.push(ManifestFrame {
            timestamp_us: f.timestamp_us,
            cloud,
            pose,
        });
    }
    write_labels(&dir.join("labels.jsonl"), &labels)?;
    let manifest = Manifest {
        sequence_id: seq.sequence_id.clone(),
        sensor_name: seq.sensor_name.clone(),
        max_range: seq.max_range,
        labels: Some("labels.jsonl".into()),
        frames: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest always serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
