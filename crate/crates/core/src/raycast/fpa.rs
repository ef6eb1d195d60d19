use nalgebra::Vector3;
use rayon::prelude::*;

use super::beams::BeamTable;
use super::grid::{project_to_grid, BinMember, RaycastConfig, RangeImageGrid};
use crate::error::Result;
use crate::geometry::{normalize_angle, transform_cloud, PointCloud, RigidTransform, Schema};

/// Angular distances below this are treated as coincident with the ray.
pub const COINCIDENCE_EPS: f64 = 1e-12;

/// Members whose depth lies within `peak_width` of the bin's closest depth.
///
/// `members` must be sorted by depth, as [`RangeImageGrid::bin`] returns them.
pub fn first_peak(members: &[BinMember], peak_width: f64) -> &[BinMember] {
    let Some(first) = members.first() else {
        return members;
    };
    let limit = first.depth + peak_width;
    let end = members.partition_point(|m| m.depth <= limit);
    &members[..end]
}

/// Angular distance between a member and the ray, with azimuth wrapped.
fn angular_distance(m: &BinMember, azimuth: f64, elevation: f64) -> f64 {
    let da = normalize_angle(m.azimuth - azimuth);
    let de = m.elevation - elevation;
    da.hypot(de)
}

/// Normalized inverse-distance weights `w_i ∝ 1 / dist_i^p` of peak members for a ray.
///
/// If a member coincides with the ray, it alone carries weight 1 (the first
/// such member when several coincide).
pub fn idw_weights(peak: &[BinMember], azimuth: f64, elevation: f64, power: f64) -> Vec<f64> {
    let dist: Vec<f64> = peak.iter().map(|m| angular_distance(m, azimuth, elevation)).collect();
    if let Some(hit) = dist.iter().position(|&d| d < COINCIDENCE_EPS) {
        let mut w = vec![0.0; peak.len()];
        w[hit] = 1.0;
        return w;
    }
    // Log domain keeps large powers from overflowing.
    let logs: Vec<f64> = dist.iter().map(|d| -power * d.ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

/// Weighted combination of `values[member.index]` over the peak.
pub fn idw_average(peak: &[BinMember], weights: &[f64], values: &[f64]) -> f64 {
    peak.iter().zip(weights).map(|(m, w)| w * values[m.index]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaycastMethod {
    /// IDW average over the first depth peak of the bin.
    FirstPeakAveraging,
    /// The bin's closest point, copied verbatim.
    ClosestPoint,
}

/// Result of casting a beam table into a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFrame {
    /// Sensor-frame returns carrying the firing beam's id.
    pub cloud: PointCloud,
    /// For each point, the index of its ray in the beam table.
    pub ray_index: Vec<usize>,
    /// For each ray of the beam table, whether it produced a point.
    pub hit: Vec<bool>,
}

impl SimulatedFrame {
    pub fn empty(n_rays: usize, schema: Schema) -> Self {
        Self {
            cloud: PointCloud::empty(Schema { beam_id: true, ..schema }),
            ray_index: Vec::new(),
            hit: vec![false; n_rays],
        }
    }

    /// Treats every point of `cloud` as the return of its own ray.
    pub fn from_cloud(cloud: PointCloud) -> Self {
        let n = cloud.len();
        Self {
            cloud,
            ray_index: (0..n).collect(),
            hit: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ray_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ray_index.is_empty()
    }

    /// Keeps the points where `mask` is true and clears the hit flags of the rest.
    pub fn retain(&self, mask: &[bool]) -> SimulatedFrame {
        let (kept, _) = self.cloud.partition(mask);
        let mut hit = self.hit.clone();
        let mut ray_index = Vec::with_capacity(kept.len());
        for (&ray, &keep) in self.ray_index.iter().zip(mask) {
            if keep {
                ray_index.push(ray);
            } else {
                hit[ray] = false;
            }
        }
        SimulatedFrame {
            cloud: kept,
            ray_index,
            hit,
        }
    }
}

struct RayReturn {
    ray: usize,
    xyz: Vector3<f64>,
    intensity: Option<f64>,
    elongation: Option<f64>,
    beam_id: u32,
}

fn cast_one(
    grid: &RangeImageGrid,
    scene: &PointCloud,
    method: RaycastMethod,
    beams: &BeamTable,
    ray: usize,
) -> Option<RayReturn> {
    let config = grid.config();
    let beam = &beams.beams[ray];
    let (az, el) = (beam.direction.azimuth, beam.direction.elevation);
    let (col, row) = config.bin_of(az, el)?;
    let members = grid.bin(col, row);
    if members.is_empty() {
        return None;
    }
    let (xyz, intensity, elongation) = match method {
        RaycastMethod::ClosestPoint => {
            let i = members[0].index;
            (
                scene.points()[i],
                scene.intensity().map(|v| v[i]),
                scene.elongation().map(|v| v[i]),
            )
        }
        RaycastMethod::FirstPeakAveraging => {
            let peak = first_peak(members, config.peak_width);
            let w = idw_weights(peak, az, el, config.idw_power);
            let pts = scene.points();
            let mut xyz = Vector3::zeros();
            for (m, wi) in peak.iter().zip(&w) {
                xyz += pts[m.index] * *wi;
            }
            (
                xyz,
                scene.intensity().map(|v| idw_average(peak, &w, v).clamp(0.0, 1.0)),
                scene.elongation().map(|v| idw_average(peak, &w, v).clamp(0.0, 1.0)),
            )
        }
    };
    if xyz.norm() > beams.max_range {
        return None;
    }
    Some(RayReturn {
        ray,
        xyz,
        intensity,
        elongation,
        beam_id: beam.beam_id,
    })
}

/// Casts every ray of `beams` into a sensor-frame grid built from `scene`.
pub fn raycast_grid(grid: &RangeImageGrid, scene: &PointCloud, beams: &BeamTable, method: RaycastMethod) -> SimulatedFrame {
    let returns: Vec<RayReturn> = (0..beams.len())
        .into_par_iter()
        .filter_map(|ray| cast_one(grid, scene, method, beams, ray))
        .collect();

    let mut hit = vec![false; beams.len()];
    let mut xyz = Vec::with_capacity(returns.len());
    let mut ray_index = Vec::with_capacity(returns.len());
    let mut beam_id = Vec::with_capacity(returns.len());
    for r in &returns {
        hit[r.ray] = true;
        xyz.push(r.xyz);
        ray_index.push(r.ray);
        beam_id.push(r.beam_id);
    }
    let mut cloud = PointCloud::new(xyz).expect("averages of finite points are finite");
    if scene.intensity().is_some() {
        cloud = cloud
            .with_intensity(returns.iter().map(|r| r.intensity.unwrap_or_default()).collect())
            .expect("intensity stays in range");
    }
    if scene.elongation().is_some() {
        cloud = cloud
            .with_elongation(returns.iter().map(|r| r.elongation.unwrap_or_default()).collect())
            .expect("elongation stays in range");
    }
    let cloud = cloud.with_beam_ids(beam_id).expect("one id per point");
    SimulatedFrame { cloud, ray_index, hit }
}

/// Simulates one sweep of `beams` from `sensor_pose` (sensor → global) into a global-frame scene.
pub fn raycast(
    scene: &PointCloud,
    sensor_pose: &RigidTransform,
    beams: &BeamTable,
    config: &RaycastConfig,
    method: RaycastMethod,
) -> Result<SimulatedFrame> {
    config.validate()?;
    beams.validate()?;
    if scene.is_empty() {
        return Ok(SimulatedFrame::empty(beams.len(), scene.schema().intersect(Schema {
            intensity: true,
            elongation: true,
            normals: false,
            beam_id: false,
        })));
    }
    let local = transform_cloud(scene, &sensor_pose.inverse());
    let grid = project_to_grid(&local, config)?;
    Ok(raycast_grid(&grid, &local, beams, method))
}

/// First-peak averaging raycasting.
pub fn raycast_fpa(
    scene: &PointCloud,
    sensor_pose: &RigidTransform,
    beams: &BeamTable,
    config: &RaycastConfig,
) -> Result<SimulatedFrame> {
    raycast(scene, sensor_pose, beams, config, RaycastMethod::FirstPeakAveraging)
}

/// Closest-point raycasting.
pub fn raycast_cp(
    scene: &PointCloud,
    sensor_pose: &RigidTransform,
    beams: &BeamTable,
    config: &RaycastConfig,
) -> Result<SimulatedFrame> {
    raycast(scene, sensor_pose, beams, config, RaycastMethod::ClosestPoint)
}
