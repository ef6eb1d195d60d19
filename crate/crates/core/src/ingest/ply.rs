//! ASCII PLY with a single `vertex` element.
//!
//! Written properties are `x y z` plus `intensity`, `elongation`, `nx ny nz`
//! and `beam_id` when the cloud carries them. Unknown vertex properties are
//! ignored on read; binary PLY is not supported.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub fn encode(cloud: &PointCloud) -> String {
    let mut props: Vec<(&str, &str)> = vec![("double", "x"), ("double", "y"), ("double", "z")];
    if cloud.intensity().is_some() {
        props.push(("double", "intensity"));
    }
    if cloud.elongation().is_some() {
        props.push(("double", "elongation"));
    }
    if cloud.normals().is_some() {
        props.extend([("double", "nx"), ("double", "ny"), ("double", "nz")]);
    }
    if cloud.beam_ids().is_some() {
        props.push(("uint", "beam_id"));
    }

    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment lidarsim point cloud\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    for (ty, name) in &props {
        let _ = writeln!(s, "property {ty} {name}");
    }
    s.push_str("end_header\n");

    for i in 0..cloud.len() {
        let p = cloud.points()[i];
        // `{}` on f64 prints the shortest representation that parses back exactly.
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(v) = cloud.intensity() {
            let _ = write!(s, " {}", v[i]);
        }
        if let Some(v) = cloud.elongation() {
            let _ = write!(s, " {}", v[i]);
        }
        if let Some(n) = cloud.normals() {
            let _ = write!(s, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        if let Some(b) = cloud.beam_ids() {
            let _ = write!(s, " {}", b[i]);
        }
        s.push('\n');
    }
    s
}

pub fn decode(text: &str, path: &Path) -> Result<PointCloud> {
    let err = |offset: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };

    let mut offset = 0usize;
    let mut lines = text.split_inclusive('\n').map(|l| {
        let at = offset;
        offset += l.len();
        (at, l.trim_end_matches(['\n', '\r']))
    });

    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(0, "missing 'ply' magic line".into())),
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut header_done = false;
    for (at, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", other, ..] => return Err(err(at, format!("unsupported PLY format {other:?}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                let n = n.parse().map_err(|_| err(at, format!("bad vertex count {n:?}")))?;
                vertex_count = Some(n);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => {
                return Err(err(at, "list properties on vertices are not supported".into()))
            }
            ["property", _ty, name] => {
                if in_vertex {
                    props.push((*name).to_string());
                }
            }
            ["property", ..] => {}
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(err(at, format!("unexpected header line {line:?}"))),
        }
    }
    if !header_done {
        return Err(err(text.len(), "missing end_header".into()));
    }
    let n = vertex_count.ok_or_else(|| err(text.len(), "no vertex element".into()))?;
    let find = |name: &str| props.iter().position(|p| p == name);
    let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
        return Err(err(0, "vertex element needs x, y and z".into()));
    };
    let i_int = find("intensity");
    let i_elo = find("elongation");
    let i_norm = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        (None, None, None) => None,
        _ => return Err(err(0, "normals need nx, ny and nz".into())),
    };
    let i_beam = find("beam_id");

    let mut xyz = Vec::with_capacity(n);
    let mut intensity = i_int.map(|_| Vec::with_capacity(n));
    let mut elongation = i_elo.map(|_| Vec::with_capacity(n));
    let mut normals = i_norm.map(|_| Vec::with_capacity(n));
    let mut beams = i_beam.map(|_| Vec::with_capacity(n));
    let mut values = Vec::with_capacity(props.len());
    for _ in 0..n {
        let (at, line) = lines
            .next()
            .ok_or_else(|| err(text.len(), format!("expected {n} vertices, found {}", xyz.len())))?;
        values.clear();
        for tok in line.split_whitespace() {
            values.push(
                tok.parse::<f64>()
                    .map_err(|_| err(at, format!("bad number {tok:?}")))?,
            );
        }
        if values.len() != props.len() {
            return Err(err(at, format!("expected {} values, found {}", props.len(), values.len())));
        }
        xyz.push(Vector3::new(values[ix], values[iy], values[iz]));
        if let (Some(col), Some(k)) = (intensity.as_mut(), i_int) {
            col.push(values[k]);
        }
        if let (Some(col), Some(k)) = (elongation.as_mut(), i_elo) {
            col.push(values[k]);
        }
        if let (Some(col), Some([a, b, c])) = (normals.as_mut(), i_norm) {
            col.push(Vector3::new(values[a], values[b], values[c]));
        }
        if let (Some(col), Some(k)) = (beams.as_mut(), i_beam) {
            let v = values[k];
            if v.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&v) {
                return Err(err(at, format!("beam_id {v} is not a u32")));
            }
            col.push(v as u32);
        }
    }

    let cloud = PointCloud {
        xyz,
        intensity,
        elongation,
        normals,
        beam_id: beams,
    };
    cloud.validate()?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_one_vertex_line() {
        let c = PointCloud::from_points([[1.0, 2.0, 3.0]]).unwrap().with_intensity(vec![0.5]).unwrap();
        let text = encode(&c);
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body, vec!["1 2 3 0.5"]);
        assert!(text.contains("element vertex 1\n"));
        assert_eq!(decode(&text, Path::new("m")).unwrap(), c);
    }

    #[test]
    fn tolerates_foreign_properties_and_elements() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n\
                    property uchar red\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n\
                    0 0 0 255\n1 1 1 0\n";
        let c = decode(text, Path::new("m")).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.intensity().is_none());
    }

    #[test]
    fn malformed_inputs_are_errors() {
        for text in [
            "",
            "plyx\n",
            "ply\nformat binary_little_endian 1.0\nend_header\n",
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 zero 0\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n0\n",
        ] {
            assert!(matches!(decode(text, Path::new("m")), Err(Error::Parse { .. })), "{text:?}");
        }
    }
}
