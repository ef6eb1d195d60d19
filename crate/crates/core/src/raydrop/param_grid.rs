use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::RayFeature;
use crate::error::{Error, Result};

/// `count` equal bins over `[min, max]`; values outside clamp to the end bins.
/// Voxels with fewer simulated rays than this have no ratio; 20 keeps the
/// binomial standard error of a defined ratio below about 0.11.
pub const DEFAULT_MIN_SIM_COUNT: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        let a = Self { min, max, count };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::invalid(
                "parameter grid",
                format!("axis [{}, {}] with {} bins is empty", self.min, self.max, self.count),
            ));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / self.count as f64
    }

    pub fn index(&self, x: f64) -> usize {
        let k = ((x - self.min) / self.step()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.count - 1)
        }
    }

    pub fn center(&self, k: usize) -> f64 {
        self.min + (k as f64 + 0.5) * self.step()
    }
}

/// Edges of the (distance, incidence, intensity) parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBins {
    pub d: Axis,
    pub theta: Axis,
    pub i: Axis,
}

impl Default for GridBins {
    /// 1 m over 0–80 m, 5° over 0–90°, 0.05 over 0–1.
    fn default() -> Self {
        Self {
            d: Axis { min: 0.0, max: 80.0, count: 80 },
            theta: Axis { min: 0.0, max: FRAC_PI_2, count: 18 },
            i: Axis { min: 0.0, max: 1.0, count: 20 },
        }
    }
}

impl GridBins {
    pub fn validate(&self) -> Result<()> {
        self.d.validate()?;
        self.theta.validate()?;
        self.i.validate()
    }

    pub fn len(&self) -> usize {
        self.d.count * self.theta.count * self.i.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, f: &RayFeature) -> [usize; 3] {
        [self.d.index(f.d), self.theta.index(f.theta), self.i.index(f.i)]
    }

    pub fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.theta.count + c[1]) * self.i.count + c[2]
    }

    pub fn unflat(&self, k: usize) -> [usize; 3] {
        let ic = self.i.count;
        let tc = self.theta.count;
        [k / (tc * ic), (k / ic) % tc, k % ic]
    }

    pub fn center(&self, c: [usize; 3]) -> RayFeature {
        RayFeature {
            d: self.d.center(c[0]),
            theta: self.theta.center(c[1]),
            i: self.i.center(c[2]),
        }
    }

    pub fn lower(&self) -> [f64; 3] {
        [self.d.min, self.theta.min, self.i.min]
    }

    pub fn upper(&self) -> [f64; 3] {
        [self.d.max, self.theta.max, self.i.max]
    }
}

/// Sim and real histograms over the parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVoxelGrid {
    pub bins: GridBins,
    pub min_sim_count: u32,
    sim: Vec<u32>,
    real: Vec<u32>,
}

impl ParamVoxelGrid {
    pub fn sim_count(&self, c: [usize; 3]) -> u32 {
        self.sim[self.bins.flat(c)]
    }

    pub fn real_count(&self, c: [usize; 3]) -> u32 {
        self.real[self.bins.flat(c)]
    }

    /// `real / sim`, defined when `sim >= min_sim_count` and `real <= sim`.
    pub fn ratio_flat(&self, k: usize) -> Option<f64> {
        let (s, r) = (self.sim[k], self.real[k]);
        (s > 0 && s >= self.min_sim_count && r <= s).then(|| r as f64 / s as f64)
    }

    pub fn ratio(&self, c: [usize; 3]) -> Option<f64> {
        self.ratio_flat(self.bins.flat(c))
    }

    /// `(cell, ratio, sim_count)` of every defined voxel, in flat order.
    pub fn defined(&self) -> Vec<([usize; 3], f64, u32)> {
        (0..self.sim.len())
            .filter_map(|k| self.ratio_flat(k).map(|r| (self.bins.unflat(k), r, self.sim[k])))
            .collect()
    }

    pub fn total_sim(&self) -> u64 {
        self.sim.iter().map(|&c| c as u64).sum()
    }

    pub fn total_real(&self) -> u64 {
        self.real.iter().map(|&c| c as u64).sum()
    }

    pub fn to_json(&self) -> String {
        let voxels = (0..self.sim.len())
            .filter(|&k| self.sim[k] > 0 || self.real[k] > 0)
            .map(|k| VoxelEntry {
                cell: self.bins.unflat(k),
                sim: self.sim[k],
                real: self.real[k],
            })
            .collect();
        let file = GridFile {
            bins: self.bins,
            min_sim_count: self.min_sim_count,
            voxels,
        };
        serde_json::to_string_pretty(&file).expect("grids serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Result<Self>> {
        let file: GridFile = serde_json::from_str(text)?;
        Ok(file.into_grid())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))?
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct GridFile {
    bins: GridBins,
    min_sim_count: u32,
    voxels: Vec<VoxelEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VoxelEntry {
    cell: [usize; 3],
    sim: u32,
    real: u32,
}

impl GridFile {
    fn into_grid(self) -> Result<ParamVoxelGrid> {
        self.bins.validate()?;
        let n = self.bins.len();
        let mut sim = vec![0; n];
        let mut real = vec![0; n];
        let dims = [self.bins.d.count, self.bins.theta.count, self.bins.i.count];
        for v in self.voxels {
            if (0..3).any(|a| v.cell[a] >= dims[a]) {
                return Err(Error::invalid("parameter grid", format!("voxel {:?} outside {:?}", v.cell, dims)));
            }
            let k = self.bins.flat(v.cell);
            sim[k] = v.sim;
            real[k] = v.real;
        }
        Ok(ParamVoxelGrid {
            bins: self.bins,
            min_sim_count: self.min_sim_count,
            sim,
            real,
        })
    }
}

/// Histograms both feature populations on shared bins.
pub fn build_param_grid(sim: &[RayFeature], real: &[RayFeature], bins: GridBins, min_sim_count: u32) -> Result<ParamVoxelGrid> {
    bins.validate()?;
    if sim.is_empty() || real.is_empty() {
        return Err(Error::invalid(
            "parameter grid",
            format!("both feature sets must be non-empty, got {} sim and {} real", sim.len(), real.len()),
        ));
    }
    let mut s = vec![0u32; bins.len()];
    let mut r = vec![0u32; bins.len()];
    for f in sim {
        s[bins.flat(bins.cell(f))] += 1;
    }
    for f in real {
        r[bins.flat(bins.cell(f))] += 1;
    }
    Ok(ParamVoxelGrid {
        bins,
        min_sim_count,
        sim: s,
        real: r,
    })
}
