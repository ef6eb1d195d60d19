//! Learned ray-wise return model.
//!
//! Simulated and real returns are histogrammed over (range, incidence,
//! intensity). Per-voxel real/sim ratios estimate the probability that a ray
//! returns; a small MLP smooths and extrapolates them. At inference the
//! probability is thresholded (or sampled) to drop simulated points.

mod apply;
mod features;
mod mlp;
mod param_grid;

pub use apply::{apply_raydrop, score_points, DropMode, LookupTable, RaydropModel, RaydropStats, ReturnModel};
pub use features::{cloud_features, frame_features, ray_feature, ray_features, RayFeature, RayFeatures};
pub use mlp::{train_surrogate, Surrogate, TrainParams, MIN_TRAINING_VOXELS};
pub use param_grid::{build_param_grid, Axis, DEFAULT_MIN_SIM_COUNT, GridBins, ParamVoxelGrid};
