//! Geometric primitives shared by every stage: point clouds, rigid poses,
//! yaw-only boxes and spherical sensor coordinates.
//!
//! Frames are right-handed with x forward, y left and z up.

mod bbox;
mod cloud;
mod spherical;
mod transform;

pub use bbox::{crop_by_box, normalize_angle, ClassLabel, OrientedBox3};
pub use cloud::{PointCloud, Schema};
pub use spherical::{cartesian_to_spherical, ground_pixel_width, spherical_to_cartesian, SphericalDirection};
pub use transform::{transform_cloud, RigidTransform};
