use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox3, PointCloud};

/// Maps the object points of a frame to a fixed-length vector.
pub trait FeatureExtractor: Sync {
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    /// `cloud` holds only points inside `boxes`; both are in the same frame.
    fn extract(&self, cloud: &PointCloud, boxes: &[OrientedBox3]) -> Vec<f64>;
}

/// Box-aligned voxel grid around every box center: a log-occupancy block then
/// a mean-intensity block, summed over boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefaultExtractor {
    pub voxel: f64,
    /// Full grid size along the box x, y, z axes.
    pub extent: [f64; 3],
}

impl Default for DefaultExtractor {
    fn default() -> Self {
        Self {
            voxel: 0.25,
            extent: [4.0, 4.0, 2.0],
        }
    }
}

impl DefaultExtractor {
    pub fn new(voxel: f64, extent: [f64; 3]) -> Result<Self> {
        if !(voxel > 0.0) || !extent.iter().all(|e| *e > 0.0) {
            return Err(Error::Domain(format!("voxel {voxel} and extent {extent:?} must be positive")));
        }
        Ok(Self { voxel, extent })
    }

    /// Cells per axis.
    pub fn shape(&self) -> [usize; 3] {
        self.extent.map(|e| (e / self.voxel).round().max(1.0) as usize)
    }

    fn cells(&self) -> usize {
        self.shape().iter().product()
    }

    /// Flat cell of a box-frame offset, `None` outside the grid.
    pub fn cell_of(&self, q: &Vector3<f64>) -> Option<usize> {
        let s = self.shape();
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let lo = -(s[k] as f64) * self.voxel / 2.0;
            let c = ((q[k] - lo) / self.voxel).floor();
            if c < 0.0 || c >= s[k] as f64 {
                return None;
            }
            idx[k] = c as usize;
        }
        Some((idx[0] * s[1] + idx[1]) * s[2] + idx[2])
    }
}

impl FeatureExtractor for DefaultExtractor {
    fn name(&self) -> String {
        let s = self.shape();
        format!("voxel-occupancy-intensity-{}x{}x{}@{}", s[0], s[1], s[2], self.voxel)
    }

    fn dim(&self) -> usize {
        2 * self.cells()
    }

    fn extract(&self, cloud: &PointCloud, boxes: &[OrientedBox3]) -> Vec<f64> {
        let n = self.cells();
        let mut out = vec![0.0; 2 * n];
        let intensity = cloud.intensity();
        for b in boxes {
            let mut count = vec![0u64; n];
            let mut isum = vec![0.0; n];
            for (k, p) in cloud.points().iter().enumerate() {
                if let Some(c) = self.cell_of(&b.to_box_frame(p)) {
                    count[c] += 1;
                    isum[c] += intensity.map_or(0.0, |v| v[k]);
                }
            }
            for c in 0..n {
                if count[c] > 0 {
                    out[c] += 1.0 + (count[c] as f64).log2();
                    out[n + c] += isum[c] / count[c] as f64;
                }
            }
        }
        out
    }
}

/// Points of `cloud` inside at least one box.
pub fn crop_to_boxes(cloud: &PointCloud, boxes: &[OrientedBox3]) -> PointCloud {
    let zero = Vector3::zeros();
    let mask: Vec<bool> = cloud
        .points()
        .iter()
        .map(|p| boxes.iter().any(|b| b.contains(p, &zero)))
        .collect();
    cloud.partition(&mask).0
}

fn checked_extract(f: &dyn FeatureExtractor, cloud: &PointCloud, boxes: &[OrientedBox3]) -> Result<Vec<f64>> {
    let v = f.extract(cloud, boxes);
    if v.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            left: v.len(),
            right: f.dim(),
        });
    }
    Ok(v)
}

/// L1 distance between the features of the box-cropped simulated and real clouds.
pub fn lpcs(sim: &PointCloud, real: &PointCloud, boxes: &[OrientedBox3], extractor: &dyn FeatureExtractor) -> Result<f64> {
    let fs = checked_extract(extractor, &crop_to_boxes(sim, boxes), boxes)?;
    let fr = checked_extract(extractor, &crop_to_boxes(real, boxes), boxes)?;
    Ok(fs.iter().zip(&fr).map(|(a, b)| (a - b).abs()).sum())
}

/// One simulated/real frame pair with its shared annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub sim: PointCloud,
    pub real: PointCloud,
    pub boxes: Vec<OrientedBox3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpcsReport {
    pub extractor: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub pairs: usize,
}

impl LpcsReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("extractor: {}\npairs: {}\nmean LPCS: {:.6}\n", self.extractor, self.pairs, self.mean);
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("  pair {i:>4}: {v:.6}\n"));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,lpcs\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }
}

/// LPCS of every pair, evaluated in parallel and averaged in pair order.
pub fn lpcs_report(pairs: &[FramePair], extractor: &dyn FeatureExtractor) -> Result<LpcsReport> {
    if pairs.is_empty() {
        return Err(Error::Domain("no frame pairs to evaluate".into()));
    }
    let values = pairs
        .par_iter()
        .map(|p| lpcs(&p.sim, &p.real, &p.boxes, extractor))
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(LpcsReport {
        extractor: extractor.name(),
        pairs: values.len(),
        values,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ClassLabel;

    fn b() -> OrientedBox3 {
        OrientedBox3::new(Vector3::zeros(), Vector3::new(4.0, 4.0, 2.0), 0.0, "a", ClassLabel::Vehicle).unwrap()
    }

    #[test]
    fn empty_cloud_is_zero_vector() {
        let f = DefaultExtractor::default();
        let v = f.extract(&PointCloud::default(), &[b()]);
        assert_eq!(v.len(), f.dim());
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn one_voxel_shift_moves_one_cell() {
        let f = DefaultExtractor::default();
        let pts = PointCloud::from_points([[0.125, 0.125, 0.125]]).unwrap();
        let moved = PointCloud::from_points([[0.375, 0.125, 0.125]]).unwrap();
        let a = f.extract(&pts, &[b()]);
        let c = f.extract(&moved, &[b()]);
        let s = f.shape();
        let ia = a.iter().position(|x| *x > 0.0).unwrap();
        let ic = c.iter().position(|x| *x > 0.0).unwrap();
        assert_eq!(ic - ia, s[1] * s[2]);
    }

    #[test]
    fn doubling_points_increments_log_occupancy() {
        let f = DefaultExtractor::default();
        let c = PointCloud::from_points([[0.1, 0.1, 0.1], [1.0, -1.0, 0.5]])
            .unwrap()
            .with_intensity(vec![0.2, 0.8])
            .unwrap();
        let d = PointCloud::concat([&c, &c]);
        let (a, z) = (f.extract(&c, &[b()]), f.extract(&d, &[b()]));
        let n = f.dim() / 2;
        for k in 0..n {
            if a[k] > 0.0 {
                assert_eq!(z[k], a[k] + 1.0);
            } else {
                assert_eq!(z[k], 0.0);
            }
        }
        assert_eq!(&a[n..], &z[n..]);
    }

    #[test]
    fn identity_and_symmetry() {
        let f = DefaultExtractor::default();
        let x = PointCloud::from_points([[0.1, 0.1, 0.1], [1.0, -1.0, 0.5]]).unwrap();
        let y = PointCloud::from_points([[0.3, 0.1, 0.1]]).unwrap();
        assert_eq!(lpcs(&x, &x, &[b()], &f).unwrap(), 0.0);
        assert_eq!(lpcs(&x, &y, &[b()], &f).unwrap(), lpcs(&y, &x, &[b()], &f).unwrap());
    }

    struct Broken;

    impl FeatureExtractor for Broken {
        fn name(&self) -> String {
            "broken".into()
        }
        fn dim(&self) -> usize {
            3
        }
        fn extract(&self, _: &PointCloud, _: &[OrientedBox3]) -> Vec<f64> {
            vec![0.0; 2]
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = PointCloud::from_points([[0.1, 0.1, 0.1]]).unwrap();
        assert!(matches!(lpcs(&x, &x, &[b()], &Broken), Err(Error::DimensionMismatch { .. })));
    }
}
