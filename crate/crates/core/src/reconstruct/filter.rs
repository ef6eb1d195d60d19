use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::PointIndex;

/// Integer voxel coordinates of `p` for cubic voxels of side `voxel`.
pub fn voxel_key(p: &Vector3<f64>, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Intensity and elongation are averaged, normals are averaged and
/// renormalized, beam ids come from the first member. Output voxels appear in
/// the order of their first member.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::Domain(format!("voxel size must be positive, got {voxel}")));
    }
    let mut slot_of: HashMap<[i64; 3], usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let slot = *slot_of.entry(voxel_key(p, voxel)).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }

    let mean = |g: &[usize], v: &[f64]| g.iter().map(|&i| v[i]).sum::<f64>() / g.len() as f64;
    let pts = cloud.points();
    let xyz = groups
        .iter()
        .map(|g| g.iter().fold(Vector3::zeros(), |a, &i| a + pts[i]) / g.len() as f64)
        .collect();
    let mut out = PointCloud::new(xyz)?;
    if let Some(v) = cloud.intensity() {
        out = out.with_intensity(groups.iter().map(|g| mean(g, v).clamp(0.0, 1.0)).collect())?;
    }
    if let Some(v) = cloud.elongation() {
        out = out.with_elongation(groups.iter().map(|g| mean(g, v).clamp(0.0, 1.0)).collect())?;
    }
    if let Some(n) = cloud.normals() {
        let normals = groups
            .iter()
            .map(|g| {
                let sum = g.iter().fold(Vector3::zeros(), |a, &i| a + n[i]);
                sum.try_normalize(1e-12).unwrap_or(n[g[0]])
            })
            .collect();
        out = out.with_normals(normals)?;
    }
    if let Some(b) = cloud.beam_ids() {
        out = out.with_beam_ids(groups.iter().map(|g| b[g[0]]).collect())?;
    }
    Ok(out)
}

/// Keep mask of [`radius_outlier_removal`].
pub fn radius_outlier_mask(cloud: &PointCloud, radius: f64, min_neighbors: usize) -> Result<Vec<bool>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!("outlier radius must be positive, got {radius}")));
    }
    if min_neighbors == 0 {
        return Err(Error::Domain("min_neighbors must be at least 1".into()));
    }
    let index = PointIndex::new(cloud.points());
    Ok(cloud
        .points()
        .par_iter()
        .map(|p| index.count_within(p, radius) > min_neighbors)
        .collect())
}

/// Keeps the points with at least `min_neighbors` other points within `radius` (inclusive).
pub fn radius_outlier_removal(cloud: &PointCloud, radius: f64, min_neighbors: usize) -> Result<PointCloud> {
    let mask = radius_outlier_mask(cloud, radius, min_neighbors)?;
    Ok(cloud.partition(&mask).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_single_and_pair() {
        let c = PointCloud::from_points([[0.3, 0.3, 0.3]]).unwrap();
        assert_eq!(voxel_downsample(&c, 1.0).unwrap().points(), c.points());
        let c = PointCloud::from_points([[0.2, 0.2, 0.2], [0.4, 0.6, 0.8]])
            .unwrap()
            .with_intensity(vec![0.0, 1.0])
            .unwrap();
        let d = voxel_downsample(&c, 1.0).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d.points()[0] - Vector3::new(0.3, 0.4, 0.5)).norm() < 1e-15);
        assert_eq!(d.intensity().unwrap(), &[0.5]);
    }

    #[test]
    fn negative_coordinates_floor() {
        let c = PointCloud::from_points([[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]]).unwrap();
        assert_eq!(voxel_downsample(&c, 1.0).unwrap().len(), 2);
    }

    #[test]
    fn tiny_voxel_is_identity_on_distinct_points() {
        let c = PointCloud::from_points([[0.0, 0.0, 0.0], [1e-3, 0.0, 0.0], [0.0, 2e-3, 5.0]]).unwrap();
        assert_eq!(voxel_downsample(&c, 1e-6).unwrap().points(), c.points());
    }

    #[test]
    fn isolated_point_is_removed() {
        let c = PointCloud::from_points([[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [10.0, 0.0, 0.0]]).unwrap();
        let kept = radius_outlier_removal(&c, 0.1, 1).unwrap();
        assert_eq!(kept.len(), 2);
        // Neighbors at exactly the radius count.
        let kept = radius_outlier_removal(&c, 0.05, 1).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn bad_parameters_are_domain_errors() {
        let c = PointCloud::from_points([[0.0, 0.0, 0.0]]).unwrap();
        assert!(voxel_downsample(&c, 0.0).is_err());
        assert!(radius_outlier_removal(&c, 0.0, 1).is_err());
        assert!(radius_outlier_removal(&c, 1.0, 0).is_err());
    }
}
