//! Single-channel portable float map (`Pf`) for range-image inspection.
//!
//! In memory the image is row-major with row 0 at the top. On disk, rows are
//! stored bottom-to-top as the format prescribes, little-endian (negative scale).

use std::path::Path;

use crate::error::{Error, Result};

/// Value written for bins that hold no point.
pub const EMPTY_DEPTH: f32 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub width: usize,
    pub height: usize,
    /// Row-major depths in meters, `EMPTY_DEPTH` where the bin is empty.
    pub data: Vec<f32>,
}

impl RangeImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!("range image must be non-empty, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::invalid(
                "range image",
                format!("{} values for a {width}x{height} image", data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![EMPTY_DEPTH; width * height])
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

pub fn encode(image: &RangeImage) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    out.reserve(image.data.len() * 4);
    for row in image.data.chunks_exact(image.width).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(buf: &[u8], path: &Path) -> Result<RangeImage> {
    let err = |offset: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    // Header: three whitespace-terminated tokens, then one whitespace byte.
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos || pos >= buf.len() {
            return Err(err(pos, "truncated header".into()));
        }
        if start > 256 {
            return Err(err(start, "header too long".into()));
        }
        tokens.push((start, String::from_utf8_lossy(&buf[start..pos]).into_owned()));
    }
    pos += 1;

    let (_, magic) = &tokens[0];
    if magic != "Pf" {
        return Err(err(0, format!("unsupported magic {magic:?}, expected Pf")));
    }
    let parse_dim = |(at, s): &(usize, String)| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| err(*at, format!("bad dimension {s:?}")))
    };
    let width = parse_dim(&tokens[1])?;
    let height = parse_dim(&tokens[2])?;
    let (scale_at, scale) = &tokens[3];
    let scale: f32 = scale
        .parse()
        .ok()
        .filter(|s: &f32| *s != 0.0 && s.is_finite())
        .ok_or_else(|| err(*scale_at, format!("bad scale {scale:?}")))?;
    let little_endian = scale < 0.0;

    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| err(tokens[1].0, "image too large".into()))?;
    let remaining = buf.len().saturating_sub(pos);
    if remaining != expected {
        return Err(err(
            buf.len(),
            format!("expected {expected} payload bytes, found {remaining}"),
        ));
    }
    let mut rows: Vec<Vec<f32>> = buf[pos..]
        .chunks_exact(width * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| {
                    let b: [u8; 4] = b.try_into().unwrap();
                    if little_endian {
                        f32::from_le_bytes(b)
                    } else {
                        f32::from_be_bytes(b)
                    }
                })
                .collect()
        })
        .collect();
    rows.reverse();
    RangeImage::new(width, height, rows.concat())
}
