use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ClassLabel, OrientedBox3};
use crate::ingest::SequenceDataset;
use crate::reconstruct::ObjectAsset;

/// Classes with fewer samples than this are flagged.
pub const MIN_CONFIDENT_SAMPLES: usize = 30;

/// One annotated box and the points it encloses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub class: ClassLabel,
    pub dims: [f64; 3],
    pub points: usize,
    /// Range of the box center from the sensor, meters.
    pub distance: f64,
    /// Axis-aligned extent of the enclosed points in the box frame, when it has volume.
    pub extent: Option<[f64; 3]>,
}

/// Samples from every box of every frame.
pub fn collect_pose_samples(seq: &SequenceDataset) -> Vec<PoseSample> {
    let mut out = Vec::new();
    for f in &seq.frames {
        for b in &f.boxes {
            let inside: Vec<Vector3<f64>> = f
                .cloud
                .points()
                .iter()
                .filter(|p| b.contains(p, &Vector3::zeros()))
                .map(|p| b.to_box_frame(p))
                .collect();
            out.push(PoseSample {
                class: b.class_label,
                dims: b.dims.into(),
                points: inside.len(),
                distance: b.center.norm(),
                extent: point_extent(&inside).map(Into::into),
            });
        }
    }
    out
}

fn point_extent(pts: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let first = pts.first()?;
    let (lo, hi) = pts.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let e = hi - lo;
    e.iter().all(|x| *x > 0.0).then_some(e)
}

/// Sample mean and `(n − 1)` standard deviation; zero deviation for one sample.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountBand {
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub samples: usize,
    pub mean_dims: [f64; 3],
    pub std_dims: [f64; 3],
    pub low_confidence: bool,
    /// Enclosed point counts per distance band, nearest band first.
    pub count_bands: Vec<CountBand>,
    /// Mean of annotation dims over enclosed-point extent, per axis.
    pub extent_ratio: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseStats {
    pub band_width: f64,
    pub classes: BTreeMap<ClassLabel, ClassStats>,
    /// Classes without any sample.
    pub empty_classes: Vec<ClassLabel>,
}

impl PoseStats {
    pub fn class(&self, c: ClassLabel) -> Result<&ClassStats> {
        self.classes
            .get(&c)
            .ok_or_else(|| Error::invalid("pose statistics", format!("no statistics for class {c}")))
    }
}

/// Per-class dimension statistics and banded point-count statistics.
pub fn fit_pose_stats(samples: &[PoseSample], band_width: f64) -> Result<PoseStats> {
    if !(band_width > 0.0) {
        return Err(Error::Domain(format!("band width must be positive, got {band_width}")));
    }
    let mut classes = BTreeMap::new();
    let mut empty_classes = Vec::new();
    for class in ClassLabel::ALL {
        let of: Vec<&PoseSample> = samples.iter().filter(|s| s.class == class).collect();
        if of.is_empty() {
            empty_classes.push(class);
            continue;
        }
        let mut mean_dims = [0.0; 3];
        let mut std_dims = [0.0; 3];
        for k in 0..3 {
            let xs: Vec<f64> = of.iter().map(|s| s.dims[k]).collect();
            (mean_dims[k], std_dims[k]) = mean_std(&xs);
        }
        let mut bands: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for s in &of {
            bands.entry((s.distance / band_width).floor() as u64).or_default().push(s.points as f64);
        }
        let count_bands = bands
            .into_iter()
            .map(|(b, xs)| {
                let (mean, std) = mean_std(&xs);
                CountBand {
                    lower: b as f64 * band_width,
                    upper: (b + 1) as f64 * band_width,
                    samples: xs.len(),
                    mean,
                    std,
                }
            })
            .collect();
        let ratios: Vec<[f64; 3]> = of
            .iter()
            .filter_map(|s| s.extent.map(|e| [s.dims[0] / e[0], s.dims[1] / e[1], s.dims[2] / e[2]]))
            .collect();
        let extent_ratio = (!ratios.is_empty()).then(|| [0, 1, 2].map(|k| mean_std(&ratios.iter().map(|r| r[k]).collect::<Vec<_>>()).0));
        classes.insert(
            class,
            ClassStats {
                samples: of.len(),
                mean_dims,
                std_dims,
                low_confidence: of.len() < MIN_CONFIDENT_SAMPLES,
                count_bands,
                extent_ratio,
            },
        );
    }
    Ok(PoseStats {
        band_width,
        classes,
        empty_classes,
    })
}

/// True iff every tight-box dimension lies within `mean ± k_sigma·σ` of the class.
pub fn filter_asset(asset: &ObjectAsset, stats: &PoseStats, k_sigma: f64) -> Result<bool> {
    let s = stats.class(asset.class_label)?;
    Ok((0..3).all(|k| (asset.canonical_box.dims[k] - s.mean_dims[k]).abs() <= k_sigma * s.std_dims[k]))
}

/// Whether `points` enclosed at `distance` is within `mean ± k_sigma·σ` of its band.
///
/// `None` when the class has no sample in that band.
pub fn point_count_plausible(stats: &ClassStats, band_width: f64, distance: f64, points: usize, k_sigma: f64) -> Option<bool> {
    let lower = (distance / band_width).floor() * band_width;
    let band = stats.count_bands.iter().find(|b| b.lower == lower)?;
    Some((points as f64 - band.mean).abs() <= k_sigma * band.std)
}

/// Grows a tight box by the class's mean annotation-to-extent ratio, never shrinking it.
pub fn loosen_box(tight: &OrientedBox3, stats: &PoseStats) -> Result<OrientedBox3> {
    let s = stats.class(tight.class_label)?;
    let ratio = s.extent_ratio.unwrap_or([1.0; 3]).map(|r| r.max(1.0));
    Ok(OrientedBox3 {
        dims: tight.dims.component_mul(&Vector3::from(ratio)),
        ..tight.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(class: ClassLabel, dims: [f64; 3], extent: Option<[f64; 3]>) -> PoseSample {
        PoseSample {
            class,
            dims,
            points: 100,
            distance: 12.0,
            extent,
        }
    }

    #[test]
    fn constant_dims_have_zero_spread() {
        let s: Vec<PoseSample> = (0..5).map(|_| sample(ClassLabel::Pedestrian, [0.5, 0.6, 1.7], None)).collect();
        let st = fit_pose_stats(&s, 10.0).unwrap();
        let c = st.class(ClassLabel::Pedestrian).unwrap();
        assert_eq!(c.std_dims, [0.0; 3]);
        assert!(c.low_confidence);
        assert!(st.empty_classes.contains(&ClassLabel::Vehicle));
        assert_eq!(c.count_bands[0].lower, 10.0);
    }

    #[test]
    fn two_sample_estimator() {
        let s = vec![sample(ClassLabel::Vehicle, [4.0, 2.0, 1.5], None), sample(ClassLabel::Vehicle, [4.2, 2.0, 1.5], None)];
        let c = fit_pose_stats(&s, 10.0).unwrap().classes[&ClassLabel::Vehicle].clone();
        assert!((c.mean_dims[0] - 4.1).abs() < 1e-12);
        assert!((c.std_dims[0] - 0.1414213562373095).abs() < 1e-9);
    }

    #[test]
    fn loosening_scales_dims() {
        let s = vec![sample(ClassLabel::Pedestrian, [0.55, 0.55, 1.98], Some([0.5, 0.5, 1.8]))];
        let st = fit_pose_stats(&s, 10.0).unwrap();
        let tight = OrientedBox3::new(Vector3::new(1.0, 2.0, 0.0), Vector3::new(0.5, 0.5, 1.8), 0.3, "p", ClassLabel::Pedestrian).unwrap();
        let l = loosen_box(&tight, &st).unwrap();
        assert!((l.dims - Vector3::new(0.55, 0.55, 1.98)).norm() < 1e-12);
        assert_eq!((l.center, l.yaw), (tight.center, tight.yaw));
    }

    #[test]
    fn ratio_below_one_never_shrinks() {
        let s = vec![sample(ClassLabel::Pedestrian, [0.4, 0.4, 1.0], Some([0.5, 0.5, 1.8]))];
        let st = fit_pose_stats(&s, 10.0).unwrap();
        let tight = OrientedBox3::new(Vector3::zeros(), Vector3::new(0.5, 0.5, 1.8), 0.0, "p", ClassLabel::Pedestrian).unwrap();
        assert_eq!(loosen_box(&tight, &st).unwrap().dims, tight.dims);
    }

    #[test]
    fn count_bands() {
        let mut s = vec![sample(ClassLabel::Cyclist, [1.8, 0.6, 1.7], None); 3];
        s[1].points = 120;
        s[2].points = 80;
        let st = fit_pose_stats(&s, 10.0).unwrap();
        let c = st.class(ClassLabel::Cyclist).unwrap();
        assert_eq!(point_count_plausible(c, 10.0, 15.0, 100, 2.0), Some(true));
        assert_eq!(point_count_plausible(c, 10.0, 15.0, 200, 2.0), Some(false));
        assert_eq!(point_count_plausible(c, 10.0, 35.0, 100, 2.0), None);
    }
}
