use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{ClassLabel, OrientedBox3, PointCloud};
use crate::reconstruct::{AssetSource, ObjectAsset};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        (b - a).cross(&(c - a)).norm() / 2.0
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }
}

/// Parses `v` and `f` records of a Wavefront OBJ; other records are ignored.
///
/// Face corners may carry `/vt/vn` suffixes and negative (relative) indices.
/// Polygons are fan-triangulated.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            offset,
            reason,
        };
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|e| err(format!("bad vertex coordinate {s:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 || !c.iter().all(|x| x.is_finite()) {
                    return Err(err("vertex needs three finite coordinates".into()));
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|e| err(format!("bad face index {s:?}: {e}")))?;
                        let n = vertices.len() as i64;
                        let k = if i > 0 { i - 1 } else { n + i };
                        if i == 0 || k < 0 || k >= n {
                            return Err(err(format!("face index {i} out of range for {n} vertices")));
                        }
                        Ok(k as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least three corners".into()));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
        offset += line.len() as u64;
    }
    Ok(TriangleMesh { vertices, triangles })
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// Uniform surface samples: triangles drawn by area, points by square-root barycentrics.
///
/// Returns the points and the triangle each came from.
pub fn sample_surface(mesh: &TriangleMesh, samples: usize, seed: u64) -> Result<(Vec<Vector3<f64>>, Vec<usize>)> {
    let areas: Vec<f64> = mesh.triangles.iter().map(|t| mesh.triangle_area(t)).collect();
    if !(areas.iter().sum::<f64>() > 0.0) {
        return Err(Error::invalid("mesh", "total surface area is zero"));
    }
    if samples == 0 {
        return Err(Error::invalid("mesh", "at least one sample is required"));
    }
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::invalid("mesh", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(samples);
    let mut tri = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t = pick.sample(&mut rng);
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
        let s = rng.random::<f64>().sqrt();
        let r = rng.random::<f64>();
        pts.push(a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r));
        tri.push(t);
    }
    Ok((pts, tri))
}

/// Smallest box dimension given to flat meshes.
pub const MIN_BOX_DIM: f64 = 1e-6;

/// Samples a mesh into an asset whose tight axis-aligned box is centered at the origin.
pub fn mesh_to_asset(
    mesh: &TriangleMesh,
    samples: usize,
    seed: u64,
    asset_id: &str,
    class_label: ClassLabel,
    intensity: f64,
) -> Result<ObjectAsset> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::invalid("mesh asset", format!("intensity {intensity} outside [0, 1]")));
    }
    let (pts, _) = sample_surface(mesh, samples, seed)?;
    let lo = pts.iter().fold(Vector3::repeat(f64::INFINITY), |m, p| m.inf(p));
    let hi = pts.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
    let center = (lo + hi) / 2.0;
    let centered: Vec<Vector3<f64>> = pts.iter().map(|p| p - center).collect();
    // Recentering rounds, so the box is sized from the centered points.
    let half = centered.iter().fold(Vector3::zeros(), |m: Vector3<f64>, p| m.sup(&p.abs()));
    let dims = (half * 2.0).map(|d| d.max(MIN_BOX_DIM));
    let n = centered.len();
    Ok(ObjectAsset {
        track_id: asset_id.into(),
        class_label,
        cloud: PointCloud::new(centered)?.with_intensity(vec![intensity; n])?,
        canonical_box: OrientedBox3::new(Vector3::zeros(), dims, 0.0, asset_id, class_label)?,
        source: AssetSource::MeshSampled,
        alignment: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
        f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 2 3 7\nf 2 7 6\nf 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n";

    #[test]
    fn cube_faces_share_samples_by_area() {
        let mesh = parse_obj(CUBE, Path::new("cube.obj")).unwrap();
        assert!((mesh.area() - 6.0).abs() < 1e-12);
        let (_, tri) = sample_surface(&mesh, 10_000, 1).unwrap();
        let mut faces = [0usize; 6];
        for t in tri {
            faces[t / 2] += 1;
        }
        for f in faces {
            assert!((f as f64 / 10_000.0 - 1.0 / 6.0).abs() < 0.02);
        }
    }

    #[test]
    fn cube_tight_box() {
        let mesh = parse_obj(CUBE, Path::new("cube.obj")).unwrap();
        let a = mesh_to_asset(&mesh, 10_000, 2, "cube", ClassLabel::Other, 0.5).unwrap();
        assert!(a.canonical_box.dims.iter().all(|d| (0.99..=1.0 + 1e-12).contains(d)));
        assert!(a.fits_box(0.0));
        assert_eq!(a.source, AssetSource::MeshSampled);
    }

    #[test]
    fn triangle_samples_stay_on_plane() {
        let mesh = parse_obj("v 0 0 2\nv 3 0 2\nv 0 4 2\nf 1 2 3\n", Path::new("t.obj")).unwrap();
        let (pts, _) = sample_surface(&mesh, 1000, 3).unwrap();
        assert!(pts.iter().all(|p| (p.z - 2.0).abs() < 1e-12 && p.x >= 0.0 && p.y >= 0.0 && p.x / 3.0 + p.y / 4.0 <= 1.0 + 1e-12));
    }

    #[test]
    fn degenerate_mesh_is_rejected() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n", Path::new("t.obj")).unwrap();
        assert!(sample_surface(&mesh, 10, 0).is_err());
    }

    #[test]
    fn obj_variants_parse() {
        let mesh = parse_obj("# c\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\nf -4 -3 -2\n", Path::new("q.obj")).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3], [0, 1, 2]]);
        let err = parse_obj("v 0 0 0\nf 1 2 3\n", Path::new("bad.obj")).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 8, .. }));
    }

    #[test]
    fn sampling_is_seeded() {
        let mesh = parse_obj(CUBE, Path::new("cube.obj")).unwrap();
        assert_eq!(sample_surface(&mesh, 100, 9).unwrap(), sample_surface(&mesh, 100, 9).unwrap());
    }
}
