//! Scene composition, mesh assets, pose statistics and new-sensor synthesis.

mod compose;
mod dataset;
mod mesh;
mod sensor;
mod stats;

pub use compose::{compose_scene, Placement, PlacementEntry, ScenarioSpec};
pub use dataset::{elevation_coverage, synthesize_dataset, write_warnings, RaydropStage, SynthWarning, SynthesisOutput, COVERAGE_SLACK};
pub use mesh::{mesh_to_asset, parse_obj, read_obj, sample_surface, TriangleMesh, MIN_BOX_DIM};
pub use sensor::NewSensorSpec;
pub use stats::{
    collect_pose_samples, filter_asset, fit_pose_stats, loosen_box, mean_std, point_count_plausible, ClassStats, CountBand, PoseSample, PoseStats,
    MIN_CONFIDENT_SAMPLES,
};
