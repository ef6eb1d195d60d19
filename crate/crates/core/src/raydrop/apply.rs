use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{RayFeature, RayFeatures};
use super::mlp::Surrogate;
use super::param_grid::{GridBins, ParamVoxelGrid};
use crate::error::{Error, Result};
use crate::raycast::SimulatedFrame;
use crate::spatial::PointIndex;

/// Maps a ray feature to a return probability in `[0, 1]`.
pub trait ReturnModel {
    fn predict(&self, f: &RayFeature) -> f64;

    fn predict_many(&self, features: &[RayFeature]) -> Vec<f64> {
        features.iter().map(|f| self.predict(f)).collect()
    }
}

impl ReturnModel for Surrogate {
    fn predict(&self, f: &RayFeature) -> f64 {
        Surrogate::predict(self, f)
    }

    fn predict_many(&self, features: &[RayFeature]) -> Vec<f64> {
        Surrogate::predict_many(self, features)
    }
}

/// Voxel ratios used directly; undefined voxels borrow the ratio of the nearest
/// defined voxel in bin-index space (lowest flat index on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub bins: GridBins,
    /// Ratio for every voxel after filling.
    filled: Vec<f64>,
}

impl LookupTable {
    pub fn from_grid(grid: &ParamVoxelGrid) -> Result<Self> {
        let defined = grid.defined();
        if defined.is_empty() {
            return Err(Error::Training("the grid has no defined voxel".into()));
        }
        let bins = grid.bins;
        let key = |c: [usize; 3]| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64);
        let cells: Vec<Vector3<f64>> = defined.iter().map(|(c, _, _)| key(*c)).collect();
        let index = PointIndex::new(&cells);
        let filled = (0..bins.len())
            .map(|k| {
                if let Some(r) = grid.ratio_flat(k) {
                    return r;
                }
                let q = key(bins.unflat(k));
                let (_, d2) = index.nearest(&q).expect("index is non-empty");
                // Ties are resolved by flat index, which `defined` is sorted by.
                let best = index
                    .within(&q, d2.sqrt() * (1.0 + 1e-9))
                    .into_iter()
                    .filter(|&j| (cells[j] - q).norm_squared() <= d2)
                    .min()
                    .expect("the nearest voxel is within its own distance");
                defined[best].1
            })
            .collect();
        Ok(Self { bins, filled })
    }

    pub fn ratio_at(&self, c: [usize; 3]) -> f64 {
        self.filled[self.bins.flat(c)]
    }
}

impl ReturnModel for LookupTable {
    fn predict(&self, f: &RayFeature) -> f64 {
        self.ratio_at(self.bins.cell(f))
    }
}

/// A trained return model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum RaydropModel {
    Mlp(Surrogate),
    /// The lookup table is rebuilt from the grid on load.
    Table(ParamVoxelGrid, LookupTable),
}

impl RaydropModel {
    pub fn table(grid: ParamVoxelGrid) -> Result<Self> {
        let t = LookupTable::from_grid(&grid)?;
        Ok(RaydropModel::Table(grid, t))
    }

    pub fn to_json(&self) -> String {
        let v = match self {
            RaydropModel::Mlp(m) => serde_json::json!({"kind": "mlp", "model": serde_json::from_str::<serde_json::Value>(&m.to_json()).expect("valid json")}),
            RaydropModel::Table(g, _) => serde_json::json!({"kind": "table", "model": serde_json::from_str::<serde_json::Value>(&g.to_json()).expect("valid json")}),
        };
        serde_json::to_string_pretty(&v).expect("models serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Result<Self>> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Tagged {
            kind: String,
            model: serde_json::Value,
        }
        let t: Tagged = serde_json::from_str(text)?;
        let body = t.model.to_string();
        Ok(match t.kind.as_str() {
            "mlp" => Surrogate::from_json(&body)?.map(RaydropModel::Mlp),
            "table" => ParamVoxelGrid::from_json(&body)?.and_then(RaydropModel::table),
            other => Err(Error::invalid("raydrop model", format!("unknown kind {other:?}"))),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))?
    }
}

impl ReturnModel for RaydropModel {
    fn predict(&self, f: &RayFeature) -> f64 {
        match self {
            RaydropModel::Mlp(m) => m.predict(f),
            RaydropModel::Table(_, t) => t.predict(f),
        }
    }

    fn predict_many(&self, features: &[RayFeature]) -> Vec<f64> {
        match self {
            RaydropModel::Mlp(m) => m.predict_many(features),
            RaydropModel::Table(_, t) => t.predict_many(features),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropMode {
    /// Keep iff the return probability is at least the threshold.
    Threshold(f64),
    /// Keep with the return probability, drawing one uniform per point from the seed.
    Bernoulli { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaydropStats {
    pub input_points: usize,
    pub kept_points: usize,
    /// Points without a usable feature; always kept.
    pub unscored_points: usize,
}

/// Return probability per point, `None` where no feature exists.
pub fn score_points(features: &RayFeatures, model: &impl ReturnModel) -> Vec<Option<f64>> {
    let valid = features.valid();
    let mut probs = model.predict_many(&valid).into_iter();
    features
        .features
        .iter()
        .map(|f| f.map(|_| probs.next().expect("one prediction per valid feature").clamp(0.0, 1.0)))
        .collect()
}

/// Drops simulated points the model deems unlikely to return. Points without
/// a usable feature are kept.
pub fn apply_raydrop(
    frame: &SimulatedFrame,
    features: &RayFeatures,
    model: &impl ReturnModel,
    mode: DropMode,
) -> Result<(SimulatedFrame, RaydropStats)> {
    if features.features.len() != frame.len() {
        return Err(Error::DimensionMismatch {
            left: features.features.len(),
            right: frame.len(),
        });
    }
    let scores = score_points(features, model);
    let mask: Vec<bool> = match mode {
        DropMode::Threshold(t) => {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Domain(format!("threshold must lie in [0, 1], got {t}")));
            }
            scores.iter().map(|s| s.is_none_or(|r| r >= t)).collect()
        }
        DropMode::Bernoulli { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            scores
                .iter()
                .map(|s| {
                    let u: f64 = rng.random();
                    s.is_none_or(|r| u < r)
                })
                .collect()
        }
    };
    let out = frame.retain(&mask);
    let stats = RaydropStats {
        input_points: frame.len(),
        kept_points: out.len(),
        unscored_points: scores.iter().filter(|s| s.is_none()).count(),
    };
    Ok((out, stats))
}
