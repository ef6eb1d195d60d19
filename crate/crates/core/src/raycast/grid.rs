use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_spherical, PointCloud};
use crate::ingest::{RangeImage, EMPTY_DEPTH};

/// Range-image geometry and first-peak parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaycastConfig {
    /// Columns (azimuth bins).
    pub width: usize,
    /// Rows (elevation bins).
    pub height: usize,
    /// Depth window behind the closest point of a bin that counts as the first peak, meters.
    pub peak_width: f64,
    /// Exponent on the inverse angular distance.
    pub idw_power: f64,
    pub azimuth_start: f64,
    pub azimuth_span: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
}

impl Default for RaycastConfig {
    /// 2560×128 over a full turn and the −17.6°…+2.4° band of a 64-beam roof
    /// sensor, with a 20 cm peak width.
    fn default() -> Self {
        Self {
            width: 2560,
            height: 128,
            peak_width: 0.20,
            idw_power: 1.0,
            azimuth_start: -PI,
            azimuth_span: TAU,
            elevation_min: (-17.6f64).to_radians(),
            elevation_max: 2.4f64.to_radians(),
        }
    }
}

impl RaycastConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.width == 0 || self.height == 0 {
            problems.push(format!("grid must be at least 1x1, got {}x{}", self.width, self.height));
        }
        if !(self.peak_width > 0.0 && self.peak_width.is_finite()) {
            problems.push(format!("peak_width must be positive, got {}", self.peak_width));
        }
        if !(self.idw_power >= 0.0 && self.idw_power.is_finite()) {
            problems.push(format!("idw_power must be >= 0, got {}", self.idw_power));
        }
        if !(self.azimuth_span > 0.0 && self.azimuth_span <= TAU + 1e-12) || !self.azimuth_start.is_finite() {
            problems.push(format!("azimuth span must lie in (0, 2pi], got {}", self.azimuth_span));
        }
        if !(self.elevation_min < self.elevation_max)
            || self.elevation_min < -PI / 2.0
            || self.elevation_max > PI / 2.0
        {
            problems.push(format!(
                "elevation range [{}, {}] must be increasing within [-pi/2, pi/2]",
                self.elevation_min, self.elevation_max
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn full_turn(&self) -> bool {
        self.azimuth_span >= TAU - 1e-12
    }

    /// `(column, row)` of the frustum containing a direction, `None` outside the FOV.
    ///
    /// Both axes use floor mapping, so a direction on a bin edge belongs to the
    /// higher-index bin. On a full turn, columns wrap modulo the width; the top
    /// elevation edge is folded into the last row.
    pub fn bin_of(&self, azimuth: f64, elevation: f64) -> Option<(usize, usize)> {
        let mut fa = (azimuth - self.azimuth_start) / self.azimuth_span;
        if self.full_turn() {
            fa = fa.rem_euclid(1.0);
        } else if !(0.0..1.0).contains(&fa) {
            return None;
        }
        let col = ((fa * self.width as f64).floor() as usize).min(self.width - 1);

        let fe = (elevation - self.elevation_min) / (self.elevation_max - self.elevation_min);
        if !(0.0..=1.0).contains(&fe) {
            return None;
        }
        let row = ((fe * self.height as f64).floor() as usize).min(self.height - 1);
        Some((col, row))
    }

    pub fn azimuth_step(&self) -> f64 {
        self.azimuth_span / self.width as f64
    }

    pub fn elevation_step(&self) -> f64 {
        (self.elevation_max - self.elevation_min) / self.height as f64
    }
}

/// A scene point's membership in a bin, with its cached spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinMember {
    pub index: usize,
    pub depth: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

/// Scene points bucketed into W×H spherical frustums.
///
/// Members of each bin are ordered by depth, then by point index.
#[derive(Debug, Clone)]
pub struct RangeImageGrid {
    config: RaycastConfig,
    offsets: Vec<usize>,
    members: Vec<BinMember>,
    dropped: usize,
}

impl RangeImageGrid {
    pub fn config(&self) -> &RaycastConfig {
        &self.config
    }

    /// Flat bin id `row * width + col`.
    pub fn bin_id(&self, col: usize, row: usize) -> usize {
        row * self.config.width + col
    }

    pub fn bin(&self, col: usize, row: usize) -> &[BinMember] {
        let id = self.bin_id(col, row);
        &self.members[self.offsets[id]..self.offsets[id + 1]]
    }

    /// Points that fell outside the FOV or sat at the sensor origin.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn binned(&self) -> usize {
        self.members.len()
    }

    /// Closest depth per bin as a range image, row 0 at the top (highest elevation).
    pub fn depth_image(&self) -> RangeImage {
        let (w, h) = (self.config.width, self.config.height);
        let mut data = vec![EMPTY_DEPTH; w * h];
        for row in 0..h {
            for col in 0..w {
                if let Some(m) = self.bin(col, row).first() {
                    data[(h - 1 - row) * w + col] = m.depth as f32;
                }
            }
        }
        RangeImage::new(w, h, data).expect("grid dimensions are validated")
    }
}

/// Buckets sensor-frame points into the range-image frustums of `config`.
pub fn project_to_grid(scene: &PointCloud, config: &RaycastConfig) -> Result<RangeImageGrid> {
    config.validate()?;
    let mut keyed: Vec<(usize, BinMember)> = scene
        .points()
        .par_iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let s = cartesian_to_spherical(p).ok()?;
            let (col, row) = config.bin_of(s.azimuth, s.elevation)?;
            Some((
                row * config.width + col,
                BinMember {
                    index,
                    depth: s.depth.unwrap_or_default(),
                    azimuth: s.azimuth,
                    elevation: s.elevation,
                },
            ))
        })
        .collect();
    // Keys are unique (point index), so the unstable sort is deterministic.
    keyed.par_sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.depth.total_cmp(&b.1.depth))
            .then(a.1.index.cmp(&b.1.index))
    });

    let n_bins = config.width * config.height;
    let mut offsets = vec![0usize; n_bins + 1];
    for (bin, _) in &keyed {
        offsets[bin + 1] += 1;
    }
    for i in 0..n_bins {
        offsets[i + 1] += offsets[i];
    }
    let dropped = scene.len() - keyed.len();
    Ok(RangeImageGrid {
        config: *config,
        offsets,
        members: keyed.into_iter().map(|(_, m)| m).collect(),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn forward_point_lands_in_center_bin() {
        let cfg = RaycastConfig {
            elevation_min: -0.2,
            elevation_max: 0.2,
            ..RaycastConfig::default()
        };
        let scene = PointCloud::from_points([[10.0, 0.0, 0.0]]).unwrap();
        let grid = project_to_grid(&scene, &cfg).unwrap();
        assert_eq!(grid.bin(cfg.width / 2, cfg.height / 2).len(), 1);
    }

    #[test]
    fn bin_edge_goes_to_higher_index() {
        let cfg = RaycastConfig {
            width: 4,
            height: 4,
            azimuth_start: -2.0,
            azimuth_span: 4.0,
            elevation_min: -1.0,
            elevation_max: 1.0,
            ..RaycastConfig::default()
        };
        // Azimuth 0 sits on the edge between columns 1 and 2, elevation 0 between rows 1 and 2.
        assert_eq!(cfg.bin_of(0.0, 0.0), Some((2, 2)));
        assert_eq!(cfg.bin_of(-2.0, -1.0), Some((0, 0)));
        assert_eq!(cfg.bin_of(2.0, 0.0), None);
        assert_eq!(cfg.bin_of(0.0, 1.0), Some((2, 3)));
        assert_eq!(cfg.bin_of(0.0, 1.0 + 1e-9), None);
    }

    #[test]
    fn full_turn_wraps_columns() {
        let cfg = RaycastConfig {
            width: 8,
            azimuth_start: 0.0,
            ..RaycastConfig::default()
        };
        assert_eq!(cfg.bin_of(-0.1, 0.0).unwrap().0, 7);
        assert_eq!(cfg.bin_of(0.1, 0.0).unwrap().0, 0);
    }

    #[test]
    fn out_of_fov_points_are_counted() {
        let cfg = RaycastConfig::default();
        let scene = PointCloud::from_points([[1.0, 0.0, 5.0], [0.0, 0.0, 0.0], [5.0, 0.0, -0.5]]).unwrap();
        let grid = project_to_grid(&scene, &cfg).unwrap();
        assert_eq!((grid.binned(), grid.dropped()), (1, 2));
    }

    #[test]
    fn matches_brute_force_edge_scan() {
        let cfg = RaycastConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> = (0..10_000)
            .map(|_| [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-8.0..2.0)])
            .collect();
        let scene = PointCloud::from_points(pts.clone()).unwrap();
        let grid = project_to_grid(&scene, &cfg).unwrap();

        let daz = cfg.azimuth_span / cfg.width as f64;
        let del = (cfg.elevation_max - cfg.elevation_min) / cfg.height as f64;
        let mut expected = vec![None; pts.len()];
        for (i, p) in pts.iter().enumerate() {
            let d = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let az = p[1].atan2(p[0]);
            let el = (p[2] / d).asin();
            let col = (0..cfg.width).find(|&c| {
                let lo = cfg.azimuth_start + c as f64 * daz;
                az >= lo && az < lo + daz
            });
            let row = (0..cfg.height).find(|&r| {
                let lo = cfg.elevation_min + r as f64 * del;
                el >= lo && el < lo + del
            });
            if let (Some(c), Some(r)) = (col, row) {
                expected[i] = Some((c, r));
            }
        }
        let mut got = vec![None; pts.len()];
        for row in 0..cfg.height {
            for col in 0..cfg.width {
                for m in grid.bin(col, row) {
                    assert!(got[m.index].is_none(), "point in two bins");
                    got[m.index] = Some((col, row));
                }
            }
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn members_are_depth_sorted() {
        let scene = PointCloud::from_points([[17.0, 0.0, 0.0], [10.0, 0.0, 0.0], [10.1, 0.0, 0.0]]).unwrap();
        let grid = project_to_grid(&scene, &RaycastConfig::default()).unwrap();
        let (c, r) = RaycastConfig::default().bin_of(0.0, 0.0).unwrap();
        let idx: Vec<usize> = grid.bin(c, r).iter().map(|m| m.index).collect();
        assert_eq!(idx, vec![1, 2, 0]);
        let img = grid.depth_image();
        assert_eq!(img.get(c, 127 - r), 10.0);
    }
}
