//! Dataset interchange: clouds, poses, labels, sequence manifests and range
//! images. Every writer has a reader that inverts it exactly.

pub mod lfpc;
pub mod pfm;
pub mod ply;
mod sequence;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use pfm::{RangeImage, EMPTY_DEPTH};
pub use sequence::{
    read_labels, read_pose, read_sequence, write_labels, write_pose, write_sequence, FrameRecord, LabelRecord,
    SequenceDataset, MANIFEST_FILE,
};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CloudFormat {
    #[serde(rename = "ascii-ply")]
    AsciiPly,
    #[default]
    #[serde(rename = "binary")]
    Binary,
}

impl CloudFormat {
    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::AsciiPly => "ply",
            CloudFormat::Binary => "lfpc",
        }
    }
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let bytes = match format {
        CloudFormat::AsciiPly => ply::encode(cloud).into_bytes(),
        CloudFormat::Binary => lfpc::encode(cloud),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a cloud, detecting LFPC or ASCII PLY from the leading bytes.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(lfpc::MAGIC) {
        lfpc::decode(&bytes, path)
    } else if bytes.starts_with(b"ply") {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: e.valid_up_to() as u64,
            reason: "PLY text is not valid UTF-8".into(),
        })?;
        ply::decode(text, path)
    } else {
        Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            reason: "unrecognized cloud format (expected LFPC or ply magic)".into(),
        })
    }
}

pub fn export_range_image(image: &RangeImage, path: &Path) -> Result<()> {
    fs::write(path, pfm::encode(image)).map_err(|e| Error::io(path, e))
}

pub fn read_range_image(path: &Path) -> Result<RangeImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    pfm::decode(&bytes, path)
}
