use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ClassLabel;
use crate::ingest::CloudFormat;
use crate::metrics::DefaultExtractor;
use crate::raycast::RaycastConfig;
use crate::raydrop::{Axis, GridBins, TrainParams, DEFAULT_MIN_SIM_COUNT};
use crate::reconstruct::{BackgroundParams, IcpParams, ObjectParams};

/// The single configuration file shared by every subcommand.
///
/// Relative paths resolve against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub paths: PathsSection,
    #[serde(default)]
    pub reconstruct: ReconstructSection,
    #[serde(default)]
    pub raycast: RaycastSection,
    #[serde(default)]
    pub raydrop: RaydropSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub gridsearch: GridsearchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Source sequence manifest.
    pub sequence: PathBuf,
    /// Every subcommand writes into `<output>/<subcommand>/`.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub format: CloudFormat,
    /// Beam table JSON; when absent each real frame's own ray directions are used.
    #[serde(default)]
    pub beams: Option<PathBuf>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    pub voxel: f64,
    pub outlier_radius: f64,
    pub min_neighbors: usize,
    pub movement_threshold: f64,
    pub dynamic_enlargement: f64,
    pub icp_min_points: usize,
    pub icp_max_iterations: usize,
    pub icp_tolerance: f64,
    pub icp_normal_k: usize,
    pub icp_rejection_factor: f64,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        let b = BackgroundParams::default();
        let o = ObjectParams::default();
        Self {
            voxel: b.voxel,
            outlier_radius: b.outlier_radius,
            min_neighbors: b.min_neighbors,
            movement_threshold: b.movement_threshold,
            dynamic_enlargement: b.dynamic_enlargement,
            icp_min_points: o.icp_min_points,
            icp_max_iterations: o.icp.max_iterations,
            icp_tolerance: o.icp.tolerance,
            icp_normal_k: o.icp.normal_k,
            icp_rejection_factor: o.icp.rejection_factor,
        }
    }
}

impl ReconstructSection {
    pub fn background(&self) -> BackgroundParams {
        BackgroundParams {
            voxel: self.voxel,
            outlier_radius: self.outlier_radius,
            min_neighbors: self.min_neighbors,
            movement_threshold: self.movement_threshold,
            dynamic_enlargement: self.dynamic_enlargement,
        }
    }

    pub fn objects(&self) -> ObjectParams {
        ObjectParams {
            icp_min_points: self.icp_min_points,
            icp: IcpParams {
                max_iterations: self.icp_max_iterations,
                tolerance: self.icp_tolerance,
                normal_k: self.icp_normal_k,
                rejection_factor: self.icp_rejection_factor,
            },
        }
    }
}

/// Range-image geometry with angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaycastSection {
    pub width: usize,
    pub height: usize,
    pub peak_width: f64,
    pub idw_power: f64,
    pub azimuth_start_deg: f64,
    pub azimuth_span_deg: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    /// `fpa` or `cp`.
    pub method: CastMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CastMethod {
    #[default]
    Fpa,
    Cp,
}

impl Default for RaycastSection {
    fn default() -> Self {
        Self::from_config(&RaycastConfig::default())
    }
}

impl RaycastSection {
    pub fn from_config(c: &RaycastConfig) -> Self {
        Self {
            width: c.width,
            height: c.height,
            peak_width: c.peak_width,
            idw_power: c.idw_power,
            azimuth_start_deg: c.azimuth_start.to_degrees(),
            azimuth_span_deg: c.azimuth_span.to_degrees(),
            elevation_min_deg: c.elevation_min.to_degrees(),
            elevation_max_deg: c.elevation_max.to_degrees(),
            method: CastMethod::Fpa,
        }
    }

    pub fn config(&self) -> RaycastConfig {
        RaycastConfig {
            width: self.width,
            height: self.height,
            peak_width: self.peak_width,
            idw_power: self.idw_power,
            azimuth_start: self.azimuth_start_deg.to_radians(),
            azimuth_span: self.azimuth_span_deg.to_radians(),
            elevation_min: self.elevation_min_deg.to_radians(),
            elevation_max: self.elevation_max_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Mlp,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropModeKind {
    #[default]
    Threshold,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaydropSection {
    pub model: ModelKind,
    pub min_sim_count: u32,
    pub normal_k: usize,
    pub d_bins: [f64; 3],
    /// Incidence-angle bins, degrees.
    pub theta_bins: [f64; 3],
    pub i_bins: [f64; 3],
    pub threshold: f64,
    pub mode: DropModeKind,
    pub train: TrainParams,
}

impl Default for RaydropSection {
    fn default() -> Self {
        let b = GridBins::default();
        let axis = |a: Axis, scale: f64| [a.min * scale, a.max * scale, a.count as f64];
        Self {
            model: ModelKind::Mlp,
            min_sim_count: DEFAULT_MIN_SIM_COUNT,
            normal_k: 10,
            d_bins: axis(b.d, 1.0),
            theta_bins: axis(b.theta, 1f64.to_degrees()),
            i_bins: axis(b.i, 1.0),
            threshold: 0.28,
            mode: DropModeKind::Threshold,
            train: TrainParams::default(),
        }
    }
}

impl RaydropSection {
    pub fn bins(&self) -> GridBins {
        let axis = |a: [f64; 3], scale: f64| Axis {
            min: a[0] * scale,
            max: a[1] * scale,
            count: a[2] as usize,
        };
        GridBins {
            d: axis(self.d_bins, 1.0),
            theta: axis(self.theta_bins, 1f64.to_radians()),
            i: axis(self.i_bins, 1.0),
        }
    }
}

/// A mesh sampled into an extra asset before synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshEntry {
    pub path: PathBuf,
    pub asset_id: String,
    pub class: ClassLabel,
    #[serde(default = "default_mesh_samples")]
    pub samples: usize,
    #[serde(default = "default_mesh_intensity")]
    pub intensity: f64,
}

fn default_mesh_samples() -> usize {
    20_000
}

fn default_mesh_intensity() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// New sensor spec JSON; the simulated sensor of this stage.
    pub sensor: Option<PathBuf>,
    /// Scenario JSON whose placements are inserted into every frame.
    pub scenario: Option<PathBuf>,
    pub meshes: Vec<MeshEntry>,
    /// Mesh assets outside `mean ± k_sigma·σ` of their class dims are discarded.
    pub k_sigma: f64,
    /// Also require a plausible enclosed-point count per distance band.
    pub filter_point_counts: bool,
    pub band_width: f64,
    pub loosen_boxes: bool,
    /// Apply the trained raydrop model to the synthesized frames.
    pub raydrop: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            sensor: None,
            scenario: None,
            meshes: Vec::new(),
            k_sigma: 2.0,
            filter_point_counts: false,
            band_width: 10.0,
            loosen_boxes: true,
            raydrop: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Sequence compared against the source; defaults to the raycast stage output.
    pub simulated: Option<PathBuf>,
    pub extractor: DefaultExtractor,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            simulated: None,
            extractor: DefaultExtractor::default(),
        }
    }
}

/// Candidate grid: the cartesian product of the lists over the `[raycast]` base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridsearchSection {
    pub widths: Vec<usize>,
    pub heights: Vec<usize>,
    pub peak_widths: Vec<f64>,
    /// Frames used for scoring, evenly spaced; 0 uses all.
    pub max_frames: usize,
}

impl Default for GridsearchSection {
    fn default() -> Self {
        Self {
            widths: vec![1024, 2048, 2560],
            heights: vec![64, 128],
            peak_widths: vec![0.1, 0.2, 0.4],
            max_frames: 0,
        }
    }
}

impl GridsearchSection {
    pub fn candidates(&self, base: &RaycastConfig) -> Vec<RaycastConfig> {
        let mut out = Vec::new();
        for &width in &self.widths {
            for &height in &self.heights {
                for &peak_width in &self.peak_widths {
                    out.push(RaycastConfig {
                        width,
                        height,
                        peak_width,
                        ..*base
                    });
                }
            }
        }
        out
    }
}

fn axis_problems(name: &str, a: &[f64; 3], out: &mut Vec<String>) {
    if !(a[0] < a[1]) || !a[0].is_finite() || !a[1].is_finite() {
        out.push(format!("raydrop.{name}: range [{}, {}] must be increasing", a[0], a[1]));
    }
    if !(a[2] >= 1.0 && a[2].fract() == 0.0) {
        out.push(format!("raydrop.{name}: bin count must be a positive integer, got {}", a[2]));
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Loads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text).map_err(|e| Error::Config(vec![format!("{}: {}", path.display(), e.message())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.resolve(base);
        Ok(c)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.sequence);
        fix(&mut self.paths.output);
        for p in [&mut self.paths.beams, &mut self.synth.sensor, &mut self.synth.scenario, &mut self.metrics.simulated]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for m in &mut self.synth.meshes {
            fix(&mut m.path);
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated configs carry a seed")
    }

    /// Every violated field, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.seed.is_none() {
            p.push("seed: required".into());
        }
        let r = &self.reconstruct;
        let positive = [
            ("reconstruct.voxel", r.voxel),
            ("reconstruct.outlier_radius", r.outlier_radius),
            ("reconstruct.icp_tolerance", r.icp_tolerance),
            ("reconstruct.icp_rejection_factor", r.icp_rejection_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                p.push(format!("{name}: must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("reconstruct.movement_threshold", r.movement_threshold),
            ("reconstruct.dynamic_enlargement", r.dynamic_enlargement),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                p.push(format!("{name}: must be non-negative, got {v}"));
            }
        }
        if r.icp_max_iterations == 0 {
            p.push("reconstruct.icp_max_iterations: must be at least 1".into());
        }
        if r.icp_normal_k < 3 {
            p.push(format!("reconstruct.icp_normal_k: must be at least 3, got {}", r.icp_normal_k));
        }
        if let Err(Error::Config(list)) = self.raycast.config().validate() {
            p.extend(list.into_iter().map(|m| format!("raycast: {m}")));
        }

        let d = &self.raydrop;
        axis_problems("d_bins", &d.d_bins, &mut p);
        axis_problems("theta_bins", &d.theta_bins, &mut p);
        axis_problems("i_bins", &d.i_bins, &mut p);
        if d.min_sim_count == 0 {
            p.push("raydrop.min_sim_count: must be at least 1".into());
        }
        if d.normal_k < 3 {
            p.push(format!("raydrop.normal_k: must be at least 3, got {}", d.normal_k));
        }
        if !(0.0..=1.0).contains(&d.threshold) {
            p.push(format!("raydrop.threshold: must lie in [0, 1], got {}", d.threshold));
        }
        if let Err(Error::Config(list)) = d.train.validate() {
            p.extend(list.into_iter().map(|m| format!("raydrop.train: {m}")));
        }

        let s = &self.synth;
        if !(s.k_sigma > 0.0) {
            p.push(format!("synth.k_sigma: must be positive, got {}", s.k_sigma));
        }
        if !(s.band_width > 0.0) {
            p.push(format!("synth.band_width: must be positive, got {}", s.band_width));
        }
        for (k, m) in s.meshes.iter().enumerate() {
            if m.samples == 0 {
                p.push(format!("synth.meshes[{k}].samples: must be at least 1"));
            }
            if !(0.0..=1.0).contains(&m.intensity) {
                p.push(format!("synth.meshes[{k}].intensity: must lie in [0, 1], got {}", m.intensity));
            }
        }

        let e = &self.metrics.extractor;
        if DefaultExtractor::new(e.voxel, e.extent).is_err() {
            p.push(format!("metrics.extractor: voxel {} and extent {:?} must be positive", e.voxel, e.extent));
        }

        let g = &self.gridsearch;
        if g.widths.is_empty() || g.heights.is_empty() || g.peak_widths.is_empty() {
            p.push("gridsearch: widths, heights and peak_widths must be non-empty".into());
        }
        if g.widths.contains(&0) || g.heights.contains(&0) {
            p.push("gridsearch: widths and heights must be positive".into());
        }
        if g.peak_widths.iter().any(|w| !(*w > 0.0)) {
            p.push("gridsearch.peak_widths: must be positive".into());
        }

        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}
