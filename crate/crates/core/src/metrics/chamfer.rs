use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::PointIndex;

/// Mean squared nearest-neighbor distance from every point of `from` to `to`.
fn directed(from: &PointCloud, to: &PointCloud) -> f64 {
    let index = PointIndex::new(to.points());
    let d: Vec<f64> = from
        .points()
        .par_iter()
        .map(|p| index.nearest(p).map_or(0.0, |(_, d2)| d2))
        .collect();
    d.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance with each direction normalized by its cloud size.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Domain(format!(
            "chamfer needs two non-empty clouds, got {} and {} points",
            p.len(),
            q.len()
        )));
    }
    Ok(directed(p, q) + directed(q, p))
}
