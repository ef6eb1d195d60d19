//! LFPC: little-endian columnar point cloud container.
//!
//! ```text
//! magic      b"LFPC"
//! version    u32
//! n_points   u64
//! n_channels u16
//! channels   n_channels × (u8 name length, name bytes)
//! payload    n_channels × n_points × f64, one contiguous column per channel
//! ```
//!
//! Channel names are `x y z intensity elongation normal_x normal_y normal_z beam_id`.
//! Readers accept any channel order, so adding a channel needs no version bump.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const MAGIC: &[u8; 4] = b"LFPC";
pub const VERSION: u32 = 1;

const KNOWN: [&str; 9] = [
    "x",
    "y",
    "z",
    "intensity",
    "elongation",
    "normal_x",
    "normal_y",
    "normal_z",
    "beam_id",
];

pub fn encode(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut columns: Vec<(&str, Vec<f64>)> = vec![
        ("x", cloud.points().iter().map(|p| p.x).collect()),
        ("y", cloud.points().iter().map(|p| p.y).collect()),
        ("z", cloud.points().iter().map(|p| p.z).collect()),
    ];
    if let Some(v) = cloud.intensity() {
        columns.push(("intensity", v.to_vec()));
    }
    if let Some(v) = cloud.elongation() {
        columns.push(("elongation", v.to_vec()));
    }
    if let Some(normals) = cloud.normals() {
        for (k, name) in ["normal_x", "normal_y", "normal_z"].into_iter().enumerate() {
            columns.push((name, normals.iter().map(|v| v[k]).collect()));
        }
    }
    if let Some(ids) = cloud.beam_ids() {
        columns.push(("beam_id", ids.iter().map(|&b| f64::from(b)).collect()));
    }

    let mut out = Vec::with_capacity(32 + columns.len() * (12 + 8 * n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(columns.len() as u16).to_le_bytes());
    for (name, _) in &columns {
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
    }
    for (_, col) in &columns {
        for v in col {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(
                self.buf.len(),
                format!("truncated {what}: need {len} bytes at offset {}", self.pos),
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8], path: &Path) -> Result<PointCloud> {
    let mut r = Reader { buf, pos: 0, path };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(r.err(0, format!("bad magic {magic:?}, expected \"LFPC\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let n = r.u64("point count")?;
    let n_channels = r.u16("channel count")? as usize;

    let mut names = Vec::with_capacity(n_channels);
    for _ in 0..n_channels {
        let at = r.pos;
        let len = r.u8("channel name length")? as usize;
        let raw = r.take(len, "channel name")?;
        let name = std::str::from_utf8(raw)
            .ok()
            .filter(|s| KNOWN.contains(s))
            .ok_or_else(|| r.err(at, format!("unknown channel {:?}", String::from_utf8_lossy(raw))))?;
        if names.contains(&name) {
            return Err(r.err(at, format!("duplicate channel {name}")));
        }
        names.push(name);
    }
    for required in ["x", "y", "z"] {
        if !names.contains(&required) {
            return Err(r.err(r.pos, format!("missing required channel {required}")));
        }
    }
    let normal_count = names.iter().filter(|n| n.starts_with("normal_")).count();
    if normal_count != 0 && normal_count != 3 {
        return Err(r.err(r.pos, "normal channels must come as a complete x/y/z triple"));
    }

    let payload = (n as u128) * 8 * (n_channels as u128);
    let remaining = (buf.len() - r.pos) as u128;
    if payload > remaining {
        return Err(r.err(
            buf.len(),
            format!("truncated payload: expected {payload} bytes, found {remaining}"),
        ));
    }
    if payload < remaining {
        return Err(r.err(r.pos + payload as usize, "trailing bytes after payload"));
    }
    let n = n as usize;

    let mut columns: Vec<(&str, Vec<f64>)> = Vec::with_capacity(n_channels);
    for name in names {
        let raw = r.take(8 * n, name)?;
        let col = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        columns.push((name, col));
    }
    let col = |name: &str| columns.iter().find(|(n, _)| *n == name).map(|(_, c)| c);

    let (xs, ys, zs) = (col("x").unwrap(), col("y").unwrap(), col("z").unwrap());
    let xyz = (0..n).map(|i| Vector3::new(xs[i], ys[i], zs[i])).collect();
    let mut cloud = PointCloud {
        xyz,
        intensity: col("intensity").cloned(),
        elongation: col("elongation").cloned(),
        ..PointCloud::default()
    };
    if let (Some(nx), Some(ny), Some(nz)) = (col("normal_x"), col("normal_y"), col("normal_z")) {
        cloud.normals = Some((0..n).map(|i| Vector3::new(nx[i], ny[i], nz[i])).collect());
    }
    if let Some(ids) = col("beam_id") {
        let mut out = Vec::with_capacity(n);
        for (i, &v) in ids.iter().enumerate() {
            if v.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&v) {
                return Err(Error::invalid("point cloud", format!("beam_id[{i}] = {v} is not a u32")));
            }
            out.push(v as u32);
        }
        cloud.beam_id = Some(out);
    }
    cloud.validate()?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        PointCloud::from_points([[1.0, 2.0, 3.0], [-0.5, 1e-300, 7.25]])
            .unwrap()
            .with_intensity(vec![0.5, 1.0])
            .unwrap()
            .with_beam_ids(vec![0, 63])
            .unwrap()
    }

    #[test]
    fn empty_cloud_keeps_channels() {
        let c = PointCloud::empty(crate::geometry::Schema {
            intensity: true,
            normals: true,
            ..Default::default()
        });
        let back = decode(&encode(&c), Path::new("mem")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.len(), 0);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes, Path::new("m")), Err(Error::Parse { offset: 0, .. })));
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(matches!(decode(&bytes, Path::new("m")), Err(Error::Parse { offset: 4, .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode(&sample());
        for cut in [3, 10, 20, bytes.len() - 1] {
            match decode(&bytes[..cut], Path::new("m")) {
                Err(Error::Parse { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_channel_is_rejected() {
        let mut bytes = encode(&sample());
        // first channel name "x" sits right after the 18-byte fixed header
        bytes[19] = b'q';
        assert!(matches!(decode(&bytes, Path::new("m")), Err(Error::Parse { offset: 18, .. })));
    }
}
