//! Static map and object asset reconstruction from an annotated sequence.

mod background;
mod filter;
mod icp;
mod objects;

pub use background::{
    accumulate_background, foreground_violations, remove_foreground, write_background, BackgroundMap, BackgroundParams,
    BackgroundProvenance,
};
pub use filter::{radius_outlier_mask, radius_outlier_removal, voxel_downsample, voxel_key};
pub use icp::{cloud_to_cloud_rms, icp_align, kabsch, point_to_plane_rms, IcpParams, IcpResult, ICP_MIN_CLOUD, NORMAL_RANK_RATIO};
pub use objects::{
    classify_dynamic, collect_tracks, read_library, reconstruct_object, reconstruct_objects, write_library,
    AlignmentRecord, AssetSource, EnlargementPolicy, ObjectAsset, ObjectParams, ObjectTrack, Observation, LIBRARY_INDEX,
};
