//! LiDAR point-cloud simulation from real drive sequences.
//!
//! The pipeline reconstructs a static background map and per-object assets
//! from an annotated sequence ([`reconstruct`]), re-simulates frames for any
//! beam pattern with first-peak averaging raycasting ([`raycast`]), thins the
//! result with a learned ray-wise return model ([`raydrop`]) and measures the
//! remaining sim/real gap ([`metrics`]). [`synth`] ties these together for
//! novel sensor configurations and mesh-based assets.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod raycast;
pub mod raydrop;
pub mod reconstruct;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
