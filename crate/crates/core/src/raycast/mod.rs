//! Frame simulation from a dense scene.
//!
//! Scene points are binned into the frustums of a spherical range image. Each
//! beam looks up its own frustum, keeps the points of the closest depth peak and
//! blends them with inverse angular-distance weights. A closest-point caster is
//! provided as the baseline.

mod beams;
mod fpa;
mod grid;
mod normals;

pub use beams::{Beam, BeamTable};
pub use fpa::{
    first_peak, idw_average, idw_weights, raycast, raycast_cp, raycast_fpa, raycast_grid, RaycastMethod,
    SimulatedFrame, COINCIDENCE_EPS,
};
pub use grid::{project_to_grid, BinMember, RangeImageGrid, RaycastConfig};
pub use normals::{estimate_normals, plane_normal, NormalEstimate};
