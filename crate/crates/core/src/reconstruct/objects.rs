use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::icp::{cloud_to_cloud_rms, icp_align, IcpParams};
use crate::error::{Error, Result};
use crate::geometry::{crop_by_box, transform_cloud, ClassLabel, OrientedBox3, PointCloud};
use crate::ingest::{lfpc, SequenceDataset};

/// Which annotated tracks get their boxes enlarged before cropping.
#[derive(Debug, Clone, PartialEq)]
pub struct EnlargementPolicy {
    pub dynamic_tracks: BTreeSet<String>,
    pub dynamic: Vector3<f64>,
    pub fixed: Vector3<f64>,
}

impl EnlargementPolicy {
    /// No track is enlarged.
    pub fn none() -> Self {
        Self {
            dynamic_tracks: BTreeSet::new(),
            dynamic: Vector3::zeros(),
            fixed: Vector3::zeros(),
        }
    }

    /// Enlarges the tracks of `seq` that move more than `movement_threshold`.
    pub fn for_sequence(seq: &SequenceDataset, movement_threshold: f64, dynamic_enlargement: f64) -> Self {
        let dynamic_tracks = global_centers(seq)
            .into_iter()
            .filter(|(_, centers)| max_pairwise_displacement(centers) > movement_threshold)
            .map(|(id, _)| id)
            .collect();
        Self {
            dynamic_tracks,
            dynamic: Vector3::repeat(dynamic_enlargement),
            fixed: Vector3::zeros(),
        }
    }

    pub fn enlargement_for(&self, track_id: &str) -> Vector3<f64> {
        if self.dynamic_tracks.contains(track_id) {
            self.dynamic
        } else {
            self.fixed
        }
    }
}

fn global_centers(seq: &SequenceDataset) -> BTreeMap<String, Vec<Vector3<f64>>> {
    let mut out: BTreeMap<String, Vec<Vector3<f64>>> = BTreeMap::new();
    for f in &seq.frames {
        for b in &f.boxes {
            out.entry(b.track_id.clone()).or_default().push(f.sensor_pose.apply(&b.center));
        }
    }
    out
}

fn max_pairwise_displacement(centers: &[Vector3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            best = best.max((a - b).norm());
        }
    }
    best
}

/// One sighting of a tracked object.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: usize,
    /// Annotation in the global frame.
    pub global_box: OrientedBox3,
    /// Points inside the (enlarged) box, in the box frame.
    pub cloud: PointCloud,
    pub enlargement: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub track_id: String,
    pub class_label: ClassLabel,
    pub observations: Vec<Observation>,
}

/// True iff some pair of global box centers is farther apart than `movement_threshold`.
pub fn classify_dynamic(track: &ObjectTrack, movement_threshold: f64) -> bool {
    let centers: Vec<_> = track.observations.iter().map(|o| o.global_box.center).collect();
    max_pairwise_displacement(&centers) > movement_threshold
}

/// Groups the annotations of `seq` by track id and crops their points into box frames.
///
/// Tracks come out ordered by id and observations by frame.
pub fn collect_tracks(seq: &SequenceDataset, policy: &EnlargementPolicy) -> Result<Vec<ObjectTrack>> {
    let mut tracks: BTreeMap<String, ObjectTrack> = BTreeMap::new();
    for (i, f) in seq.frames.iter().enumerate() {
        for b in &f.boxes {
            let enlargement = policy.enlargement_for(&b.track_id);
            let (inside, _) = crop_by_box(&f.cloud, b, &enlargement)?;
            let cloud = transform_cloud(&inside, &b.pose().inverse());
            let track = tracks.entry(b.track_id.clone()).or_insert_with(|| ObjectTrack {
                track_id: b.track_id.clone(),
                class_label: b.class_label,
                observations: Vec::new(),
            });
            track.observations.push(Observation {
                frame: i,
                global_box: b.transformed(&f.sensor_pose),
                cloud,
                enlargement,
            });
        }
    }
    Ok(tracks.into_values().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetSource {
    Reconstructed,
    MeshSampled,
}

/// How one observation was merged into the accumulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub frame: usize,
    pub points: usize,
    pub icp_attempted: bool,
    /// The ICP result lowered the cluster-to-accumulation RMS and was used.
    pub icp_accepted: bool,
    pub rms_before: Option<f64>,
    pub rms_after: Option<f64>,
    pub converged: bool,
    pub point_to_point_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAsset {
    pub track_id: String,
    pub class_label: ClassLabel,
    /// Box-frame points, x along the object's heading.
    pub cloud: PointCloud,
    /// Zero yaw, centered at the origin.
    pub canonical_box: OrientedBox3,
    pub source: AssetSource,
    pub alignment: Vec<AlignmentRecord>,
}

impl ObjectAsset {
    /// Whether every point lies in the canonical box grown by `tolerance` on each side.
    pub fn fits_box(&self, tolerance: f64) -> bool {
        let enl = Vector3::repeat(2.0 * tolerance);
        self.cloud.points().iter().all(|p| self.canonical_box.contains(p, &enl))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectParams {
    /// ICP runs only when both sides have more points than this.
    pub icp_min_points: usize,
    pub icp: IcpParams,
}

impl Default for ObjectParams {
    fn default() -> Self {
        Self {
            icp_min_points: 200,
            icp: IcpParams::default(),
        }
    }
}

/// Fuses the box-frame clusters of a track into one asset.
///
/// Each cluster is aligned to the running accumulation. The ICP refinement is
/// kept only when it lowers the cluster-to-accumulation RMS, otherwise the box
/// alignment stands.
pub fn reconstruct_object(track: &ObjectTrack, params: &ObjectParams) -> Result<ObjectAsset> {
    let first = track
        .observations
        .first()
        .ok_or_else(|| Error::invalid("track", format!("{} has no observations", track.track_id)))?;
    let mut dims = first.global_box.dims + first.enlargement;
    for o in &track.observations[1..] {
        dims = dims.sup(&(o.global_box.dims + o.enlargement));
    }

    let mut acc = first.cloud.clone();
    let mut alignment = vec![AlignmentRecord {
        frame: first.frame,
        points: first.cloud.len(),
        icp_attempted: false,
        icp_accepted: false,
        rms_before: None,
        rms_after: None,
        converged: false,
        point_to_point_fallback: false,
        note: None,
    }];
    for o in &track.observations[1..] {
        let mut rec = AlignmentRecord {
            frame: o.frame,
            points: o.cloud.len(),
            icp_attempted: false,
            icp_accepted: false,
            rms_before: cloud_to_cloud_rms(&o.cloud, &acc),
            rms_after: None,
            converged: false,
            point_to_point_fallback: false,
            note: None,
        };
        let mut cluster = o.cloud.clone();
        if acc.len() > params.icp_min_points && o.cloud.len() > params.icp_min_points {
            rec.icp_attempted = true;
            match icp_align(&o.cloud, &acc, &crate::geometry::RigidTransform::identity(), &params.icp) {
                Ok(r) => {
                    let moved = transform_cloud(&o.cloud, &r.transform);
                    let after = cloud_to_cloud_rms(&moved, &acc);
                    rec.rms_after = after;
                    rec.converged = r.converged;
                    rec.point_to_point_fallback = r.point_to_point_fallback;
                    if let (Some(b), Some(a)) = (rec.rms_before, after) {
                        if a < b {
                            rec.icp_accepted = true;
                            cluster = moved;
                        }
                    }
                    if !r.converged {
                        rec.note = Some("icp hit the iteration limit".into());
                    }
                }
                Err(e) => rec.note = Some(format!("icp failed: {e}")),
            }
        }
        acc = PointCloud::concat([&acc, &cluster]);
        alignment.push(rec);
    }

    let canonical_box = OrientedBox3::new(Vector3::zeros(), dims, 0.0, track.track_id.clone(), track.class_label)?;
    // ICP may move points past the box faces.
    let (cloud, _) = crop_by_box(&acc, &canonical_box, &Vector3::zeros())?;
    Ok(ObjectAsset {
        track_id: track.track_id.clone(),
        class_label: track.class_label,
        cloud,
        canonical_box,
        source: AssetSource::Reconstructed,
        alignment,
    })
}

/// Reconstructs every track in parallel, preserving track order.
pub fn reconstruct_objects(tracks: &[ObjectTrack], params: &ObjectParams) -> Result<Vec<ObjectAsset>> {
    tracks.par_iter().map(|t| reconstruct_object(t, params)).collect()
}

pub const LIBRARY_INDEX: &str = "index.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryEntry {
    track_id: String,
    class: ClassLabel,
    source: AssetSource,
    cloud: String,
    #[serde(rename = "box")]
    box_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxFile {
    dims: [f64; 3],
    #[serde(default)]
    alignment: Vec<AlignmentRecord>,
}

fn file_stem(i: usize, track_id: &str) -> String {
    let clean: String = track_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{i:04}_{clean}")
}

/// Writes `assets` as `<dir>/index.json` plus one LFPC cloud and one box JSON per asset.
pub fn write_library(dir: &Path, assets: &[ObjectAsset]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::with_capacity(assets.len());
    for (i, a) in assets.iter().enumerate() {
        let stem = file_stem(i, &a.track_id);
        let cloud = format!("{stem}.lfpc");
        let box_file = format!("{stem}.json");
        let cloud_path = dir.join(&cloud);
        fs::write(&cloud_path, lfpc::encode(&a.cloud)).map_err(|e| Error::io(&cloud_path, e))?;
        let box_path = dir.join(&box_file);
        let body = BoxFile {
            dims: a.canonical_box.dims.into(),
            alignment: a.alignment.clone(),
        };
        fs::write(&box_path, serde_json::to_string_pretty(&body).expect("box files serialize"))
            .map_err(|e| Error::io(&box_path, e))?;
        index.push(LibraryEntry {
            track_id: a.track_id.clone(),
            class: a.class_label,
            source: a.source,
            cloud,
            box_file,
        });
    }
    let path = dir.join(LIBRARY_INDEX);
    fs::write(&path, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(|e| Error::io(&path, e))
}

pub fn read_library(dir: &Path) -> Result<Vec<ObjectAsset>> {
    let path = dir.join(LIBRARY_INDEX);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: Vec<LibraryEntry> = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    index
        .into_iter()
        .map(|e| {
            let cloud = crate::ingest::read_cloud(&dir.join(&e.cloud))?;
            let box_path = dir.join(&e.box_file);
            let text = fs::read_to_string(&box_path).map_err(|err| Error::io(&box_path, err))?;
            let body: BoxFile = serde_json::from_str(&text).map_err(|err| Error::json(&box_path, err))?;
            Ok(ObjectAsset {
                canonical_box: OrientedBox3::new(Vector3::zeros(), body.dims.into(), 0.0, e.track_id.clone(), e.class)?,
                track_id: e.track_id,
                class_label: e.class,
                cloud,
                source: e.source,
                alignment: body.alignment,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;

    fn obs(frame: usize, center: [f64; 3], cloud: PointCloud) -> Observation {
        Observation {
            frame,
            global_box: OrientedBox3::new(center.into(), Vector3::new(4.0, 2.0, 1.5), 0.0, "t", ClassLabel::Vehicle).unwrap(),
            cloud,
            enlargement: Vector3::zeros(),
        }
    }

    fn track(observations: Vec<Observation>) -> ObjectTrack {
        ObjectTrack {
            track_id: "t".into(),
            class_label: ClassLabel::Vehicle,
            observations,
        }
    }

    #[test]
    fn dynamic_rule() {
        let c = PointCloud::default();
        assert!(!classify_dynamic(&track(vec![obs(0, [0.0; 3], c.clone())]), 0.5));
        let t = track(vec![obs(0, [0.0; 3], c.clone()), obs(1, [0.6, 0.0, 0.0], c)]);
        assert!(classify_dynamic(&t, 0.5));
    }

    #[test]
    fn single_observation_is_passed_through() {
        let c = PointCloud::from_points([[0.5, 0.2, 0.1], [-1.0, 0.3, 0.0]]).unwrap();
        let a = reconstruct_object(&track(vec![obs(3, [9.0, 1.0, 0.0], c.clone())]), &ObjectParams::default()).unwrap();
        assert_eq!(a.cloud, c);
        assert_eq!(a.canonical_box.center, Vector3::zeros());
        assert_eq!(a.canonical_box.yaw, 0.0);
        assert!(a.fits_box(0.01));
    }

    #[test]
    fn small_clusters_are_unioned() {
        let a = PointCloud::from_points([[0.5, 0.2, 0.1]]).unwrap();
        let b = PointCloud::from_points([[-0.5, 0.2, 0.1], [0.0, 0.0, 0.0]]).unwrap();
        let asset = reconstruct_object(&track(vec![obs(0, [0.0; 3], a), obs(1, [1.0, 0.0, 0.0], b)]), &ObjectParams::default()).unwrap();
        assert_eq!(asset.cloud.len(), 3);
        assert!(!asset.alignment[1].icp_attempted);
    }

    #[test]
    fn library_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = PointCloud::from_points([[0.5, 0.2, 0.1]]).unwrap().with_intensity(vec![0.4]).unwrap();
        let asset = reconstruct_object(&track(vec![obs(0, [0.0; 3], c)]), &ObjectParams::default()).unwrap();
        write_library(dir.path(), std::slice::from_ref(&asset)).unwrap();
        let back = read_library(dir.path()).unwrap();
        assert_eq!(back, vec![asset]);
    }

    #[test]
    fn collect_crops_into_box_frame() {
        use crate::ingest::FrameRecord;
        let b = OrientedBox3::new(Vector3::new(10.0, 0.0, 0.0), Vector3::new(4.0, 2.0, 2.0), std::f64::consts::FRAC_PI_2, "car", ClassLabel::Vehicle)
            .unwrap();
        let frame = FrameRecord {
            timestamp_us: 0,
            sensor_pose: RigidTransform::from_translation(Vector3::new(100.0, 0.0, 0.0)),
            cloud: PointCloud::from_points([[10.0, 1.5, 0.0], [20.0, 0.0, 0.0]]).unwrap(),
            boxes: vec![b],
        };
        let seq = SequenceDataset {
            sequence_id: "s".into(),
            sensor_name: "l".into(),
            max_range: 75.0,
            frames: vec![frame],
        };
        let tracks = collect_tracks(&seq, &EnlargementPolicy::none()).unwrap();
        assert_eq!(tracks.len(), 1);
        let o = &tracks[0].observations[0];
        assert!((o.cloud.points()[0] - Vector3::new(1.5, 0.0, 0.0)).norm() < 1e-12);
        assert!((o.global_box.center - Vector3::new(110.0, 0.0, 0.0)).norm() < 1e-12);
    }
}
