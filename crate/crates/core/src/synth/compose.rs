use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform_cloud, ClassLabel, OrientedBox3, PointCloud};
use crate::reconstruct::ObjectAsset;

/// An asset instance at a global pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub asset_id: String,
    pub pose: OrientedBox3,
}

/// Background id plus placements, as stored in scenario JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub background: String,
    pub placements: Vec<PlacementEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementEntry {
    pub asset: String,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
    #[serde(default)]
    pub track_id: Option<String>,
    pub class: ClassLabel,
}

impl ScenarioSpec {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn placements(&self) -> Result<Vec<Placement>> {
        self.placements
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(Placement {
                    asset_id: p.asset.clone(),
                    pose: OrientedBox3::new(
                        Vector3::from(p.center),
                        Vector3::from(p.dims),
                        p.yaw,
                        p.track_id.clone().unwrap_or_else(|| format!("placed-{i}")),
                        p.class,
                    )?,
                })
            })
            .collect()
    }
}

/// Background plus every placed asset moved to its pose. Occlusion is left to raycasting.
///
/// Returns the dense scene and the placement boxes.
pub fn compose_scene(
    background: &PointCloud,
    assets: &[ObjectAsset],
    placements: &[Placement],
) -> Result<(PointCloud, Vec<OrientedBox3>)> {
    let by_id: HashMap<&str, &ObjectAsset> = assets.iter().map(|a| (a.track_id.as_str(), a)).collect();
    let missing: BTreeSet<&str> = placements
        .iter()
        .map(|p| p.asset_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAssets {
            missing: missing.into_iter().map(String::from).collect(),
        });
    }
    let moved: Vec<PointCloud> = placements
        .iter()
        .map(|p| transform_cloud(&by_id[p.asset_id.as_str()].cloud, &p.pose.pose()))
        .collect();
    let scene = PointCloud::concat(std::iter::once(background).chain(moved.iter()));
    Ok((scene, placements.iter().map(|p| p.pose.clone()).collect()))
}
