//! Sim/real gap measures and raycasting hyperparameter search.

mod chamfer;
mod lpcs;
mod ranking;

pub use chamfer::chamfer;
pub use lpcs::{crop_to_boxes, lpcs, lpcs_report, DefaultExtractor, FeatureExtractor, FramePair, LpcsReport};
pub use ranking::{rank_order, rank_raycast_configs, ranking_to_csv, ranking_to_text, RankedConfig, ScenePair};
