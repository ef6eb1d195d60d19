use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{CastMethod, DropModeKind, ModelKind, PipelineConfig};
use super::manifest::{RunLog, RunManifest};
use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_spherical, PointCloud};
use crate::ingest::{export_range_image, read_cloud, read_sequence, write_sequence, FrameRecord, SequenceDataset, MANIFEST_FILE};
use crate::metrics::{chamfer, lpcs_report, rank_raycast_configs, ranking_to_csv, ranking_to_text, FramePair, ScenePair};
use crate::raycast::{project_to_grid, raycast, Beam, BeamTable, RaycastMethod, SimulatedFrame};
use crate::raydrop::{apply_raydrop, build_param_grid, cloud_features, train_surrogate, DropMode, RaydropModel, RaydropStats, RayFeature};
use crate::reconstruct::{
    accumulate_background, collect_tracks, read_library, reconstruct_objects, write_background, write_library, AssetSource,
    EnlargementPolicy, ObjectAsset,
};
use crate::synth::{
    collect_pose_samples, compose_scene, filter_asset, fit_pose_stats, loosen_box, mesh_to_asset, point_count_plausible,
    read_obj, synthesize_dataset, write_warnings, NewSensorSpec, Placement, PoseStats, RaydropStage, ScenarioSpec,
};

pub const BACKGROUND_CLOUD: &str = "background.lfpc";
pub const BACKGROUND_PROVENANCE: &str = "background.json";
pub const ASSET_DIR: &str = "assets";
pub const SEQUENCE_DIR: &str = "sequence";
pub const MODEL_FILE: &str = "model.json";

/// Shared state of one invocation.
pub struct Context {
    pub config: PipelineConfig,
    pub config_sha256: String,
    pub config_path: PathBuf,
    pub workers: usize,
}

impl Context {
    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.config.paths.output.join(stage)
    }

    fn background_path(&self) -> PathBuf {
        self.stage_dir("reconstruct").join(BACKGROUND_CLOUD)
    }

    fn library_dir(&self) -> PathBuf {
        self.stage_dir("reconstruct").join(ASSET_DIR)
    }

    fn simulated_manifest(&self) -> PathBuf {
        self.stage_dir("raycast").join(SEQUENCE_DIR).join(MANIFEST_FILE)
    }

    fn model_path(&self) -> PathBuf {
        self.stage_dir("raydrop-train").join(MODEL_FILE)
    }
}

/// A stage's output directory, log and manifest. The directory is recreated so
/// stale files from earlier runs never mix with fresh ones.
struct Stage {
    dir: PathBuf,
    log: RunLog,
    manifest: RunManifest,
}

impl Stage {
    fn open(ctx: &Context, name: &str) -> Result<Self> {
        let dir = ctx.stage_dir(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut manifest = RunManifest::new(name, ctx.config.seed(), ctx.config_sha256.clone(), ctx.workers);
        manifest.add_input(&ctx.config_path)?;
        Ok(Self {
            log: RunLog::create(&dir, name)?,
            dir,
            manifest,
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.add_input(path)
    }

    fn sequence(&mut self, manifest: &Path) -> Result<SequenceDataset> {
        self.input(manifest)?;
        let seq = read_sequence(manifest)?;
        self.log.info(&format!("loaded {} frames from {}", seq.frames.len(), manifest.display()))?;
        Ok(seq)
    }

    fn library(&mut self, ctx: &Context) -> Result<(PointCloud, Vec<ObjectAsset>)> {
        let bg = ctx.background_path();
        self.input(&bg)?;
        self.input(&ctx.library_dir().join(crate::reconstruct::LIBRARY_INDEX))?;
        Ok((read_cloud(&bg)?, read_library(&ctx.library_dir())?))
    }

    fn model(&mut self, ctx: &Context) -> Result<RaydropModel> {
        let path = ctx.model_path();
        self.input(&path)?;
        RaydropModel::read(&path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value).expect("reports serialize");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn finish(mut self, summary: String) -> Result<String> {
        self.log.info(&summary)?;
        drop(self.log);
        self.manifest.finish(&self.dir)?;
        Ok(summary)
    }
}

/// One ray per real point, in the real point's direction and beam.
pub fn beams_from_cloud(cloud: &PointCloud, max_range: f64) -> Result<BeamTable> {
    let ids = cloud.beam_ids();
    let beams = cloud
        .points()
        .iter()
        .enumerate()
        .filter_map(|(k, p)| {
            let mut direction = cartesian_to_spherical(p).ok()?;
            direction.depth = None;
            Some(Beam {
                direction,
                beam_id: ids.map_or(0, |ids| ids[k]),
            })
        })
        .collect();
    BeamTable::new(beams, max_range)
}

fn frame_beams(table: Option<&BeamTable>, frame: &FrameRecord, max_range: f64) -> Result<BeamTable> {
    match table {
        Some(t) => Ok(t.clone()),
        None => beams_from_cloud(&frame.cloud, max_range),
    }
}

/// Global placements for a frame's boxes, plus the track ids without an asset.
fn frame_placements(frame: &FrameRecord, assets: &[ObjectAsset]) -> (Vec<Placement>, Vec<String>) {
    let mut placed = Vec::new();
    let mut missing = Vec::new();
    for b in &frame.boxes {
        if assets.iter().any(|a| a.track_id == b.track_id) {
            placed.push(Placement {
                asset_id: b.track_id.clone(),
                pose: b.transformed(&frame.sensor_pose),
            });
        } else {
            missing.push(b.track_id.clone());
        }
    }
    (placed, missing)
}

fn read_beams(stage: &mut Stage, ctx: &Context) -> Result<Option<BeamTable>> {
    match &ctx.config.paths.beams {
        Some(p) => {
            stage.input(p)?;
            Ok(Some(BeamTable::read(p)?))
        }
        None => Ok(None),
    }
}

pub fn reconstruct(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let mut stage = Stage::open(ctx, "reconstruct")?;
    let seq = stage.sequence(&c.paths.sequence)?;
    let bg_params = c.reconstruct.background();
    let map = accumulate_background(&seq, &bg_params)?;
    write_background(&map, &stage.dir.join(BACKGROUND_CLOUD), &stage.dir.join(BACKGROUND_PROVENANCE))?;
    stage.log.info(&format!(
        "background: {} accumulated, {} after filtering, {} after re-crop",
        map.provenance.accumulated_points, map.provenance.filtered_points, map.provenance.recropped_points
    ))?;

    let policy = EnlargementPolicy::for_sequence(&seq, bg_params.movement_threshold, bg_params.dynamic_enlargement);
    let tracks = collect_tracks(&seq, &policy)?;
    let assets = reconstruct_objects(&tracks, &c.reconstruct.objects())?;
    for a in &assets {
        let accepted = a.alignment.iter().filter(|r| r.icp_accepted).count();
        stage.log.info(&format!("asset {}: {} points, {} of {} clusters refined by ICP", a.track_id, a.cloud.len(), accepted, a.alignment.len()))?;
    }
    write_library(&stage.dir.join(ASSET_DIR), &assets)?;
    stage.finish(format!("reconstruct: background {} points, {} assets", map.cloud.len(), assets.len()))
}

pub fn raycast_stage(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let mut stage = Stage::open(ctx, "raycast")?;
    let seq = stage.sequence(&c.paths.sequence)?;
    let (background, assets) = stage.library(ctx)?;
    let table = read_beams(&mut stage, ctx)?;
    let config = c.raycast.config();
    let method = match c.raycast.method {
        CastMethod::Fpa => RaycastMethod::FirstPeakAveraging,
        CastMethod::Cp => RaycastMethod::ClosestPoint,
    };

    let results: Vec<(FrameRecord, Vec<String>, crate::ingest::RangeImage)> = seq
        .frames
        .par_iter()
        .map(|f| {
            let (placed, missing) = frame_placements(f, &assets);
            let (scene, _) = compose_scene(&background, &assets, &placed)?;
            let beams = frame_beams(table.as_ref(), f, seq.max_range)?;
            let sim = raycast(&scene, &f.sensor_pose, &beams, &config, method)?;
            let image = project_to_grid(&sim.cloud, &config)?.depth_image();
            Ok((
                FrameRecord {
                    timestamp_us: f.timestamp_us,
                    sensor_pose: f.sensor_pose,
                    cloud: sim.cloud,
                    boxes: f.boxes.clone(),
                },
                missing,
                image,
            ))
        })
        .collect::<Result<_>>()?;

    let images = stage.dir.join("range_images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut frames = Vec::with_capacity(results.len());
    let mut points = 0;
    for (i, (f, missing, image)) in results.into_iter().enumerate() {
        for id in missing {
            stage.log.warn(Some(i), "missing_asset", &format!("no asset for track {id}; its points are absent"))?;
        }
        export_range_image(&image, &images.join(format!("{i:06}.pfm")))?;
        points += f.cloud.len();
        frames.push(f);
    }
    let sim = SequenceDataset {
        sequence_id: format!("{}-sim", seq.sequence_id),
        sensor_name: seq.sensor_name.clone(),
        max_range: seq.max_range,
        frames,
    };
    write_sequence(&sim, &stage.dir.join(SEQUENCE_DIR), c.paths.format)?;
    stage.finish(format!("raycast: {} frames, {} simulated points", sim.frames.len(), points))
}

fn valid_features(clouds: &[&PointCloud], k: usize) -> Result<Vec<RayFeature>> {
    let per: Vec<Vec<RayFeature>> = clouds
        .par_iter()
        .map(|c| Ok(cloud_features(c, k)?.valid()))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Serialize)]
struct TrainingReport {
    model: ModelKind,
    sim_features: usize,
    real_features: usize,
    defined_voxels: usize,
    final_loss: Option<f64>,
    loss_history: Vec<f64>,
}

pub fn raydrop_train(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let d = &c.raydrop;
    let mut stage = Stage::open(ctx, "raydrop-train")?;
    let real = stage.sequence(&c.paths.sequence)?;
    let sim = stage.sequence(&ctx.simulated_manifest())?;
    if real.frames.len() != sim.frames.len() {
        return Err(Error::DimensionMismatch {
            left: sim.frames.len(),
            right: real.frames.len(),
        });
    }
    let sim_f = valid_features(&sim.frames.iter().map(|f| &f.cloud).collect::<Vec<_>>(), d.normal_k)?;
    let real_f = valid_features(&real.frames.iter().map(|f| &f.cloud).collect::<Vec<_>>(), d.normal_k)?;
    let grid = build_param_grid(&sim_f, &real_f, d.bins(), d.min_sim_count)?;
    stage.write_text("param_grid.json", &grid.to_json())?;
    let defined = grid.defined().len();
    stage.log.info(&format!("{} sim and {} real features, {} defined voxels", sim_f.len(), real_f.len(), defined))?;

    let (model, loss_history) = match d.model {
        ModelKind::Mlp => {
            let s = train_surrogate(&grid, &d.train, c.seed())?;
            let h = s.loss_history.clone();
            (RaydropModel::Mlp(s), h)
        }
        ModelKind::Table => (RaydropModel::table(grid)?, Vec::new()),
    };
    stage.write_text(MODEL_FILE, &model.to_json())?;
    let report = TrainingReport {
        model: d.model,
        sim_features: sim_f.len(),
        real_features: real_f.len(),
        defined_voxels: defined,
        final_loss: loss_history.last().copied(),
        loss_history,
    };
    stage.write_json("training.json", &report)?;
    let loss = report.final_loss.map_or(String::new(), |l| format!(", final loss {l:.6}"));
    stage.finish(format!("raydrop-train: {defined} defined voxels{loss}"))
}

fn drop_mode(c: &PipelineConfig, frame: usize) -> DropMode {
    match c.raydrop.mode {
        DropModeKind::Threshold => DropMode::Threshold(c.raydrop.threshold),
        DropModeKind::Bernoulli => DropMode::Bernoulli {
            seed: c.seed().wrapping_add(frame as u64),
        },
    }
}

#[derive(Serialize)]
struct ApplyReport {
    mode: DropModeKind,
    threshold: f64,
    frames: Vec<RaydropStats>,
    input_points: usize,
    kept_points: usize,
}

pub fn raydrop_apply(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let mut stage = Stage::open(ctx, "raydrop-apply")?;
    let sim = stage.sequence(&ctx.simulated_manifest())?;
    let model = stage.model(ctx)?;
    let thinned: Vec<(FrameRecord, RaydropStats)> = sim
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let frame = SimulatedFrame::from_cloud(f.cloud.clone());
            let feats = cloud_features(&f.cloud, c.raydrop.normal_k)?;
            let (kept, stats) = apply_raydrop(&frame, &feats, &model, drop_mode(c, i))?;
            Ok((
                FrameRecord {
                    cloud: kept.cloud,
                    ..f.clone()
                },
                stats,
            ))
        })
        .collect::<Result<_>>()?;
    let (frames, stats): (Vec<FrameRecord>, Vec<RaydropStats>) = thinned.into_iter().unzip();
    let report = ApplyReport {
        mode: c.raydrop.mode,
        threshold: c.raydrop.threshold,
        input_points: stats.iter().map(|s| s.input_points).sum(),
        kept_points: stats.iter().map(|s| s.kept_points).sum(),
        frames: stats,
    };
    let out = SequenceDataset {
        sequence_id: format!("{}-raydrop", sim.sequence_id),
        frames,
        ..sim
    };
    write_sequence(&out, &stage.dir.join(SEQUENCE_DIR), c.paths.format)?;
    stage.write_json("stats.json", &report)?;
    stage.finish(format!("raydrop-apply: kept {} of {} points", report.kept_points, report.input_points))
}

/// Samples, filters and optionally loosens the configured mesh assets.
fn mesh_assets(ctx: &Context, stage: &mut Stage, stats: &PoseStats) -> Result<Vec<ObjectAsset>> {
    let s = &ctx.config.synth;
    let mut out = Vec::new();
    for (k, m) in s.meshes.iter().enumerate() {
        stage.input(&m.path)?;
        let mesh = read_obj(&m.path)?;
        let mut asset = mesh_to_asset(&mesh, m.samples, ctx.config.seed().wrapping_add(k as u64), &m.asset_id, m.class, m.intensity)?;
        match filter_asset(&asset, stats, s.k_sigma) {
            Ok(true) => {}
            Ok(false) => {
                stage.log.warn(None, "asset_filtered", &format!("mesh asset {} has implausible dims {:?} for its class", m.asset_id, asset.canonical_box.dims.as_slice()))?;
                continue;
            }
            Err(_) => {
                stage.log.warn(None, "no_class_statistics", &format!("no {} boxes in the source; mesh asset {} kept unfiltered", m.class, m.asset_id))?;
            }
        }
        if s.loosen_boxes {
            if let Ok(b) = loosen_box(&asset.canonical_box, stats) {
                asset.canonical_box = b;
            }
        }
        out.push(asset);
    }
    Ok(out)
}

pub fn synth(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let s = &c.synth;
    let sensor_path = s
        .sensor
        .clone()
        .ok_or_else(|| Error::Config(vec!["synth.sensor: required by the synth subcommand".into()]))?;
    let mut stage = Stage::open(ctx, "synth")?;
    let seq = stage.sequence(&c.paths.sequence)?;
    let (background, mut assets) = stage.library(ctx)?;
    stage.input(&sensor_path)?;
    let spec = NewSensorSpec::read(&sensor_path)?;

    let stats = fit_pose_stats(&collect_pose_samples(&seq), s.band_width)?;
    for class in &stats.empty_classes {
        stage.log.info(&format!("no {class} boxes in the source sequence"))?;
    }
    stage.write_json("pose_stats.json", &stats)?;
    let meshes = mesh_assets(ctx, &mut stage, &stats)?;
    if !meshes.is_empty() {
        write_library(&stage.dir.join("mesh_assets"), &meshes)?;
    }
    assets.extend(meshes);

    let mut inserted = Vec::new();
    if let Some(p) = &s.scenario {
        stage.input(p)?;
        inserted = ScenarioSpec::read(p)?.placements()?;
        // Mesh assets carry annotation-style boxes; their placements adopt those dims.
        for pl in &mut inserted {
            if let Some(a) = assets.iter().find(|a| a.track_id == pl.asset_id && a.source == AssetSource::MeshSampled) {
                pl.pose.dims = a.canonical_box.dims;
            }
        }
    }

    let model = if s.raydrop { Some(stage.model(ctx)?) } else { None };
    let stage_cfg = model.as_ref().map(|m| RaydropStage {
        model: m,
        mode: drop_mode(c, 0),
        normal_k: c.raydrop.normal_k,
    });
    let out = synthesize_dataset(&seq, &background, &assets, &inserted, &spec, &c.raycast.config(), stage_cfg.as_ref())?;
    for w in &out.warnings {
        stage.log.warn(Some(w.frame), &w.code, &w.message)?;
    }
    write_warnings(&stage.dir.join("warnings.jsonl"), &out.warnings)?;

    if s.filter_point_counts {
        for (i, f) in out.dataset.frames.iter().enumerate() {
            for b in f.boxes.iter().filter(|b| inserted.iter().any(|p| p.pose.track_id == b.track_id)) {
                let Ok(cs) = stats.class(b.class_label) else { continue };
                let n = f.cloud.points().iter().filter(|p| b.contains(p, &nalgebra::Vector3::zeros())).count();
                if point_count_plausible(cs, s.band_width, b.center.norm(), n, s.k_sigma) == Some(false) {
                    stage.log.warn(Some(i), "implausible_point_count", &format!("{} encloses {n} points at {:.1} m", b.track_id, b.center.norm()))?;
                }
            }
        }
    }
    write_sequence(&out.dataset, &stage.dir.join(SEQUENCE_DIR), c.paths.format)?;
    let points: usize = out.dataset.frames.iter().map(|f| f.cloud.len()).sum();
    stage.finish(format!("synth: {} frames, {} points, {} warnings", out.dataset.frames.len(), points, out.warnings.len()))
}

#[derive(Serialize)]
struct ChamferReport {
    values: Vec<Option<f64>>,
    mean: Option<f64>,
}

pub fn metrics(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let mut stage = Stage::open(ctx, "metrics")?;
    let real = stage.sequence(&c.paths.sequence)?;
    let sim_path = c.metrics.simulated.clone().unwrap_or_else(|| ctx.simulated_manifest());
    let sim = stage.sequence(&sim_path)?;
    if real.frames.len() != sim.frames.len() {
        return Err(Error::DimensionMismatch {
            left: sim.frames.len(),
            right: real.frames.len(),
        });
    }
    let pairs: Vec<FramePair> = sim
        .frames
        .iter()
        .zip(&real.frames)
        .map(|(s, r)| FramePair {
            sim: s.cloud.clone(),
            real: r.cloud.clone(),
            boxes: r.boxes.clone(),
        })
        .collect();
    let report = lpcs_report(&pairs, &c.metrics.extractor)?;
    stage.write_json("lpcs.json", &report)?;
    stage.write_text("lpcs.txt", &report.to_text())?;
    stage.write_text("lpcs.csv", &report.to_csv())?;

    let values: Vec<Option<f64>> = pairs.par_iter().map(|p| chamfer(&p.sim, &p.real).ok()).collect();
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    stage.write_json("chamfer.json", &ChamferReport { values, mean })?;
    let ch = mean.map_or("undefined".into(), |m| format!("{m:.6}"));
    stage.finish(format!("metrics: mean LPCS {:.6}, mean chamfer {ch} over {} frames", report.mean, report.pairs))
}

pub fn gridsearch(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let mut stage = Stage::open(ctx, "gridsearch")?;
    let seq = stage.sequence(&c.paths.sequence)?;
    let (background, assets) = stage.library(ctx)?;
    let table = read_beams(&mut stage, ctx)?;
    let n = seq.frames.len();
    let picks: Vec<usize> = match c.gridsearch.max_frames {
        0 => (0..n).collect(),
        m if m >= n => (0..n).collect(),
        m => (0..m).map(|k| k * n / m).collect(),
    };
    let pairs: Vec<ScenePair> = picks
        .iter()
        .map(|&i| {
            let f = &seq.frames[i];
            let (placed, _) = frame_placements(f, &assets);
            Ok(ScenePair {
                scene: compose_scene(&background, &assets, &placed)?.0,
                sensor_pose: f.sensor_pose,
                real: f.cloud.clone(),
                boxes: f.boxes.clone(),
                beams: frame_beams(table.as_ref(), f, seq.max_range)?,
            })
        })
        .collect::<Result<_>>()?;
    let candidates = c.gridsearch.candidates(&c.raycast.config());
    stage.log.info(&format!("{} candidates over {} frames", candidates.len(), pairs.len()))?;
    let ranked = rank_raycast_configs(&candidates, &pairs, &c.metrics.extractor)?;
    stage.write_json("ranking.json", &ranked)?;
    stage.write_text("ranking.txt", &ranking_to_text(&ranked))?;
    stage.write_text("ranking.csv", &ranking_to_csv(&ranked))?;
    let best = &ranked[0];
    stage.finish(format!(
        "gridsearch: best {}x{} peak {} m (mean LPCS {})",
        best.config.width,
        best.config.height,
        best.config.peak_width,
        best.score.map_or("n/a".into(), |s| format!("{s:.6}"))
    ))
}
