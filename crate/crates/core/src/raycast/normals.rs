use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::PointIndex;

/// Eigenvalue ratio below which a neighborhood is treated as a line or a point.
const DEGENERATE_RATIO: f64 = 1e-6;

/// A cloud carrying estimated normals and which of them are trustworthy.
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    /// Invalid points carry the unit direction toward the sensor as a placeholder.
    pub cloud: PointCloud,
    pub valid: Vec<bool>,
}

impl NormalEstimate {
    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }
}

/// Fits a plane to the k nearest neighbors (the point included) of every point.
///
/// The normal is the eigenvector of the smallest covariance eigenvalue,
/// oriented so that `n · (sensor_origin − p) ≥ 0`.
pub fn estimate_normals(cloud: &PointCloud, k: usize, sensor_origin: &Vector3<f64>) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::invalid("normal estimation", format!("k must be at least 3, got {k}")));
    }
    if k > cloud.len() {
        return Err(Error::invalid(
            "normal estimation",
            format!("k = {k} exceeds the {} points of the cloud", cloud.len()),
        ));
    }
    let pts = cloud.points();
    let index = PointIndex::new(pts);
    let fitted: Vec<(Vector3<f64>, bool)> = pts
        .par_iter()
        .map(|p| {
            let toward = sensor_origin - p;
            let fallback = toward.try_normalize(0.0).unwrap_or_else(Vector3::z);
            let neigh = index.k_nearest(p, k);
            match plane_normal(neigh.iter().map(|(i, _)| &pts[*i])) {
                Some(n) => (if n.dot(&toward) < 0.0 { -n } else { n }, true),
                None => (fallback, false),
            }
        })
        .collect();
    let (normals, valid): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    Ok(NormalEstimate {
        cloud: cloud.clone().with_normals(normals)?,
        valid,
    })
}

/// Least-squares plane normal of a point set, `None` for collinear or coincident sets.
pub fn plane_normal<'a>(points: impl Iterator<Item = &'a Vector3<f64>> + Clone) -> Option<Vector3<f64>> {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(max > 0.0) || mid <= DEGENERATE_RATIO * max {
        return None;
    }
    Some(eig.eigenvectors.column(order[0]).normalize())
}
