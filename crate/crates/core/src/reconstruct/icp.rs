use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform_cloud, PointCloud, RigidTransform};
use crate::raycast::estimate_normals;
use crate::spatial::PointIndex;

/// Below this smallest-to-largest eigenvalue ratio of the target normal
/// scatter, point-to-plane leaves a translation unconstrained.
pub const NORMAL_RANK_RATIO: f64 = 1e-3;

/// Smallest cloud either side of an alignment may have.
pub const ICP_MIN_CLOUD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once the norm of the 6-vector update falls below this.
    pub tolerance: f64,
    /// Neighborhood size for target normals.
    pub normal_k: usize,
    /// Correspondences farther than this multiple of the median distance are discarded.
    pub rejection_factor: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
            normal_k: 10,
            rejection_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps source coordinates onto the target.
    pub transform: RigidTransform,
    /// RMS of the final residuals over the inlier correspondences, in the metric that was minimized.
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The target could not constrain point-to-plane, so point-to-point was used.
    pub point_to_point_fallback: bool,
}

struct Pair {
    source: Vector3<f64>,
    target: usize,
}

/// Nearest target for every transformed source point, without the far tail.
fn correspond(src: &[Vector3<f64>], index: &PointIndex, factor: f64) -> Vec<Pair> {
    let nn: Vec<(Vector3<f64>, usize, f64)> = src
        .iter()
        .filter_map(|p| index.nearest(p).map(|(j, d2)| (*p, j, d2.sqrt())))
        .collect();
    let mut dists: Vec<f64> = nn.iter().map(|x| x.2).collect();
    dists.sort_by(f64::total_cmp);
    let median = dists[dists.len() / 2];
    nn.into_iter()
        .filter(|x| x.2 <= factor * median)
        .map(|(source, target, _)| Pair { source, target })
        .collect()
}

fn rotation_update(omega: &Vector3<f64>, v: &Vector3<f64>) -> RigidTransform {
    RigidTransform::from_rotation_vector(*omega, *v)
}

/// Rigid transform minimizing `Σ |R a_i + t − b_i|²`.
pub fn kabsch(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Option<RigidTransform> {
    let n = a.len() as f64;
    let ca = a.iter().fold(Vector3::zeros(), |s, p| s + p) / n;
    let cb = b.iter().fold(Vector3::zeros(), |s, p| s + p) / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (p - ca) * (q - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    RigidTransform::new(r, cb - r * ca).ok()
}

/// Whether the target's normals span all three directions.
fn normals_well_conditioned(normals: &[Vector3<f64>], valid: &[bool]) -> bool {
    let mut scatter = Matrix3::zeros();
    let mut count = 0usize;
    for (n, _) in normals.iter().zip(valid).filter(|(_, v)| **v) {
        scatter += n * n.transpose();
        count += 1;
    }
    if count == 0 {
        return false;
    }
    let eig = SymmetricEigen::new(scatter / count as f64).eigenvalues;
    let max = eig.max();
    max > 0.0 && eig.min() / max >= NORMAL_RANK_RATIO
}

/// Refines `init` so that the transformed `source` lies on `target`.
///
/// Uses point-to-plane Gauss-Newton with normals estimated on the target, and
/// point-to-point (closed-form Kabsch per iteration) when those normals are
/// rank-deficient.
pub fn icp_align(source: &PointCloud, target: &PointCloud, init: &RigidTransform, params: &IcpParams) -> Result<IcpResult> {
    if source.len() < ICP_MIN_CLOUD || target.len() < ICP_MIN_CLOUD {
        return Err(Error::invalid(
            "icp",
            format!(
                "both clouds need at least {ICP_MIN_CLOUD} points, got {} and {}",
                source.len(),
                target.len()
            ),
        ));
    }
    let tgt = target.points();
    let index = PointIndex::new(tgt);
    let k = params.normal_k.clamp(3, target.len());
    let origin = target.centroid().unwrap_or_default();
    let est = estimate_normals(target, k, &origin)?;
    let normals = est.cloud.normals().expect("estimate_normals always attaches normals").to_vec();
    let fallback = !normals_well_conditioned(&normals, &est.valid);

    let mut transform = *init;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let moved = transform_cloud(source, &transform);
        let pairs = correspond(moved.points(), &index, params.rejection_factor);
        let step = if fallback {
            let a: Vec<_> = pairs.iter().map(|p| p.source).collect();
            let b: Vec<_> = pairs.iter().map(|p| tgt[p.target]).collect();
            match kabsch(&a, &b) {
                Some(t) => t,
                None => break,
            }
        } else {
            let mut jtj = Matrix6::zeros();
            let mut jtr = Vector6::zeros();
            for p in pairs.iter().filter(|p| est.valid[p.target]) {
                let n = normals[p.target];
                let r = (p.source - tgt[p.target]).dot(&n);
                let c = p.source.cross(&n);
                let j = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
                jtj += j * j.transpose();
                jtr += j * r;
            }
            let Some(chol) = jtj.cholesky() else { break };
            let x = -chol.solve(&jtr);
            rotation_update(&Vector3::new(x[0], x[1], x[2]), &Vector3::new(x[3], x[4], x[5]))
        };
        transform = step.compose(&transform);
        let size = step.rotation_angle().hypot(step.translation().norm());
        if size < params.tolerance {
            converged = true;
            break;
        }
    }

    let moved = transform_cloud(source, &transform);
    let pairs = correspond(moved.points(), &index, params.rejection_factor);
    let residuals: Vec<f64> = if fallback {
        pairs.iter().map(|p| (p.source - tgt[p.target]).norm()).collect()
    } else {
        pairs
            .iter()
            .filter(|p| est.valid[p.target])
            .map(|p| (p.source - tgt[p.target]).dot(&normals[p.target]))
            .collect()
    };
    let rms = if residuals.is_empty() {
        0.0
    } else {
        (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
    };
    Ok(IcpResult {
        transform,
        rms,
        iterations,
        converged,
        point_to_point_fallback: fallback,
    })
}

/// RMS nearest-neighbor distance from every source point to the target.
pub fn cloud_to_cloud_rms(source: &PointCloud, target: &PointCloud) -> Option<f64> {
    if source.is_empty() || target.is_empty() {
        return None;
    }
    let index = PointIndex::new(target.points());
    let sum: f64 = source.points().iter().map(|p| index.nearest(p).map_or(0.0, |x| x.1)).sum();
    Some((sum / source.len() as f64).sqrt())
}

/// RMS point-to-plane residual of `source` against `target`, normals from `target`.
pub fn point_to_plane_rms(source: &PointCloud, target: &PointCloud, normal_k: usize) -> Result<f64> {
    let origin = target.centroid().unwrap_or_default();
    let est = estimate_normals(target, normal_k.clamp(3, target.len().max(3)), &origin)?;
    let normals = est.cloud.normals().expect("normals attached");
    let index = PointIndex::new(target.points());
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in source.points() {
        if let Some((j, _)) = index.nearest(p) {
            if est.valid[j] {
                sum += (p - target.points()[j]).dot(&normals[j]).powi(2);
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { (sum / count as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three faces of a box corner, so every translation is observable.
    fn corner(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let (u, v) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                match i % 3 {
                    0 => [u, v, 0.0],
                    1 => [u, 0.0, v],
                    _ => [0.0, u, v],
                }
            })
            .collect();
        PointCloud::from_points(pts).unwrap()
    }

    #[test]
    fn identical_clouds_stay_put() {
        let c = corner(600, 1);
        let r = icp_align(&c, &c, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!((r.transform.to_matrix() - RigidTransform::identity().to_matrix()).norm() < 1e-9);
        assert!(r.rms < 1e-9);
        assert!(!r.point_to_point_fallback);
    }

    #[test]
    fn recovers_known_translation() {
        let src = corner(1500, 2);
        let shift = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let tgt = transform_cloud(&src, &shift);
        let r = icp_align(&src, &tgt, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!((r.transform.translation() - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-3);
        assert!(r.converged);
    }

    #[test]
    fn recovers_small_rotation() {
        let src = corner(1500, 3);
        let truth = RigidTransform::from_rotation_vector(Vector3::new(0.01, -0.02, 0.03), Vector3::new(0.02, -0.01, 0.015));
        let tgt = transform_cloud(&src, &truth);
        let r = icp_align(&src, &tgt, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!((r.transform.to_matrix() - truth.to_matrix()).norm() < 1e-4);
    }

    #[test]
    fn plane_target_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 3]> = (0..400).map(|_| [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), 0.0]).collect();
        let tgt = PointCloud::from_points(pts).unwrap();
        let src = transform_cloud(&tgt, &RigidTransform::from_translation(Vector3::new(0.05, 0.0, 0.0)));
        // In-plane motion leaves the point-to-plane residual at zero.
        assert!(point_to_plane_rms(&src, &tgt, 10).unwrap() < 1e-12);
        let r = icp_align(&src, &tgt, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!(r.point_to_point_fallback);
    }

    #[test]
    fn kabsch_recovers_rotation() {
        let a: Vec<Vector3<f64>> = (0..20).map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.1, (i % 3) as f64)).collect();
        let t = RigidTransform::from_rotation_vector(Vector3::new(0.3, -0.2, 1.0), Vector3::new(1.0, 2.0, 3.0));
        let b: Vec<Vector3<f64>> = a.iter().map(|p| t.apply(p)).collect();
        let k = kabsch(&a, &b).unwrap();
        assert!((k.to_matrix() - t.to_matrix()).norm() < 1e-9);
    }

    #[test]
    fn too_small_is_rejected() {
        let c = PointCloud::from_points((0..5).map(|i| [i as f64, 0.0, 0.0])).unwrap();
        assert!(icp_align(&c, &c, &RigidTransform::identity(), &IcpParams::default()).is_err());
    }
}
