use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Which optional per-point channels a cloud carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Schema {
    pub intensity: bool,
    pub elongation: bool,
    pub normals: bool,
    pub beam_id: bool,
}

impl Schema {
    pub fn xyz_only() -> Self {
        Self::default()
    }

    pub fn intersect(self, other: Schema) -> Schema {
        Schema {
            intensity: self.intensity && other.intensity,
            elongation: self.elongation && other.elongation,
            normals: self.normals && other.normals,
            beam_id: self.beam_id && other.beam_id,
        }
    }
}

/// Columnar point set in meters with optional per-point channels.
///
/// Every optional channel, when present, has exactly one entry per point.
/// Coordinates are always finite and normals are unit length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub(crate) xyz: Vec<Vector3<f64>>,
    pub(crate) intensity: Option<Vec<f64>>,
    pub(crate) elongation: Option<Vec<f64>>,
    pub(crate) normals: Option<Vec<Vector3<f64>>>,
    pub(crate) beam_id: Option<Vec<u32>>,
}

const NORMAL_TOLERANCE: f64 = 1e-6;

impl PointCloud {
    pub fn new(xyz: Vec<Vector3<f64>>) -> Result<Self> {
        if let Some(i) = xyz.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("point cloud", format!("point {i} is not finite")));
        }
        Ok(Self {
            xyz,
            ..Self::default()
        })
    }

    pub fn from_points<I: IntoIterator<Item = [f64; 3]>>(points: I) -> Result<Self> {
        Self::new(points.into_iter().map(Vector3::from).collect())
    }

    /// An empty cloud carrying the channels named by `schema`.
    pub fn empty(schema: Schema) -> Self {
        Self {
            xyz: Vec::new(),
            intensity: schema.intensity.then(Vec::new),
            elongation: schema.elongation.then(Vec::new),
            normals: schema.normals.then(Vec::new),
            beam_id: schema.beam_id.then(Vec::new),
        }
    }

    pub fn with_intensity(mut self, values: Vec<f64>) -> Result<Self> {
        self.check_len("intensity", values.len())?;
        check_unit_interval("intensity", &values)?;
        self.intensity = Some(values);
        Ok(self)
    }

    pub fn with_elongation(mut self, values: Vec<f64>) -> Result<Self> {
        self.check_len("elongation", values.len())?;
        check_unit_interval("elongation", &values)?;
        self.elongation = Some(values);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        self.check_len("normals", normals.len())?;
        if let Some(i) = normals
            .iter()
            .position(|n| !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > NORMAL_TOLERANCE)
        {
            return Err(Error::invalid("point cloud", format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_beam_ids(mut self, ids: Vec<u32>) -> Result<Self> {
        self.check_len("beam_id", ids.len())?;
        self.beam_id = Some(ids);
        Ok(self)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    fn check_len(&self, channel: &str, len: usize) -> Result<()> {
        if len != self.xyz.len() {
            return Err(Error::invalid(
                "point cloud",
                format!("channel {channel} has {len} entries for {} points", self.xyz.len()),
            ));
        }
        Ok(())
    }

    /// Re-checks every invariant. Constructors already enforce them; this is
    /// for clouds assembled field-by-field inside the crate or decoded from disk.
    pub fn validate(&self) -> Result<()> {
        let n = self.xyz.len();
        if let Some(i) = self.xyz.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("point cloud", format!("point {i} is not finite")));
        }
        let lens = [
            ("intensity", self.intensity.as_ref().map(Vec::len)),
            ("elongation", self.elongation.as_ref().map(Vec::len)),
            ("normals", self.normals.as_ref().map(Vec::len)),
            ("beam_id", self.beam_id.as_ref().map(Vec::len)),
        ];
        for (name, len) in lens {
            if let Some(len) = len {
                if len != n {
                    return Err(Error::invalid(
                        "point cloud",
                        format!("channel {name} has {len} entries for {n} points"),
                    ));
                }
            }
        }
        if let Some(values) = &self.intensity {
            check_unit_interval("intensity", values)?;
        }
        if let Some(values) = &self.elongation {
            check_unit_interval("elongation", values)?;
        }
        if let Some(normals) = &self.normals {
            if let Some(i) = normals
                .iter()
                .position(|v| !v.iter().all(|c| c.is_finite()) || (v.norm() - 1.0).abs() > NORMAL_TOLERANCE)
            {
                return Err(Error::invalid("point cloud", format!("normal {i} is not unit length")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.xyz
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn elongation(&self) -> Option<&[f64]> {
        self.elongation.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn beam_ids(&self) -> Option<&[u32]> {
        self.beam_id.as_deref()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            intensity: self.intensity.is_some(),
            elongation: self.elongation.is_some(),
            normals: self.normals.is_some(),
            beam_id: self.beam_id.is_some(),
        }
    }

    /// Points at `indices`, in that order, with all channels.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        fn pick<T: Copy>(col: &Option<Vec<T>>, indices: &[usize]) -> Option<Vec<T>> {
            col.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect())
        }
        PointCloud {
            xyz: indices.iter().map(|&i| self.xyz[i]).collect(),
            intensity: pick(&self.intensity, indices),
            elongation: pick(&self.elongation, indices),
            normals: pick(&self.normals, indices),
            beam_id: pick(&self.beam_id, indices),
        }
    }

    /// Splits into (points where `mask` is true, points where it is false).
    pub fn partition(&self, mask: &[bool]) -> (PointCloud, PointCloud) {
        assert_eq!(mask.len(), self.len(), "mask length must match the cloud");
        let (yes, no): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| mask[i]);
        (self.select(&yes), self.select(&no))
    }

    /// Concatenates clouds in order. The result keeps only the channels that
    /// every part carries.
    pub fn concat<'a, I>(parts: I) -> PointCloud
    where
        I: IntoIterator<Item = &'a PointCloud>,
    {
        let parts: Vec<&PointCloud> = parts.into_iter().collect();
        let Some(first) = parts.first() else {
            return PointCloud::default();
        };
        let schema = parts.iter().fold(first.schema(), |s, p| s.intersect(p.schema()));
        let mut out = PointCloud::empty(schema);
        for part in parts {
            out.xyz.extend_from_slice(&part.xyz);
            if let (Some(dst), Some(src)) = (out.intensity.as_mut(), part.intensity.as_ref()) {
                dst.extend_from_slice(src);
            }
            if let (Some(dst), Some(src)) = (out.elongation.as_mut(), part.elongation.as_ref()) {
                dst.extend_from_slice(src);
            }
            if let (Some(dst), Some(src)) = (out.normals.as_mut(), part.normals.as_ref()) {
                dst.extend_from_slice(src);
            }
            if let (Some(dst), Some(src)) = (out.beam_id.as_mut(), part.beam_id.as_ref()) {
                dst.extend_from_slice(src);
            }
        }
        out
    }

    /// Applies `f` to every coordinate and `g` to every normal, keeping the
    /// scalar channels untouched.
    pub(crate) fn map_geometry(
        &self,
        f: impl Fn(&Vector3<f64>) -> Vector3<f64>,
        g: impl Fn(&Vector3<f64>) -> Vector3<f64>,
    ) -> PointCloud {
        PointCloud {
            xyz: self.xyz.iter().map(f).collect(),
            intensity: self.intensity.clone(),
            elongation: self.elongation.clone(),
            normals: self.normals.as_ref().map(|n| n.iter().map(g).collect()),
            beam_id: self.beam_id.clone(),
        }
    }

    /// Centroid of all points, `None` for an empty cloud.
    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.is_empty() {
            return None;
        }
        let sum = self.xyz.iter().fold(Vector3::zeros(), |acc, p| acc + p);
        Some(sum / self.len() as f64)
    }
}

fn check_unit_interval(channel: &str, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(
            "point cloud",
            format!("{channel}[{i}] = {} is outside [0, 1]", values[i]),
        ));
    }
    Ok(())
}
