//! Binary float tensor container for heatmaps and score maps.
//!
//! Layout: magic `FVT1`, little-endian u32 rank (2 or 3), little-endian u32
//! dimensions (height, width[, labels]), then row-major little-endian f32
//! samples. Every sample must be finite; rank-2 samples must be non-negative.

use std::fs;
use std::path::Path;

use crate::dataio::{PerspectiveHeatmap, ScoreMap};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FVT1";

/// A decoded tensor file: rank 2 is a heatmap, rank 3 a score map.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Heatmap(PerspectiveHeatmap),
    Scores(ScoreMap),
}

impl Tensor {
    pub fn into_heatmap(self) -> Result<PerspectiveHeatmap> {
        match self {
            Tensor::Heatmap(h) => Ok(h),
            Tensor::Scores(_) => Err(Error::invalid(
                "tensor",
                "expected a rank-2 heatmap, found a rank-3 score map",
            )),
        }
    }

    pub fn into_scores(self) -> Result<ScoreMap> {
        match self {
            Tensor::Scores(s) => Ok(s),
            Tensor::Heatmap(_) => Err(Error::invalid(
                "tensor",
                "expected a rank-3 score map, found a rank-2 heatmap",
            )),
        }
    }
}

fn take_u32(data: &[u8], pos: &mut usize) -> Result<u32> {
    if *pos + 4 > data.len() {
        return Err(Error::TensorTruncated {
            expected: *pos + 4,
            got: data.len(),
        });
    }
    let v = u32::from_le_bytes(data[*pos..*pos + 4].try_into().expect("4 bytes"));
    *pos += 4;
    Ok(v)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() < 4 || &data[..4] != MAGIC {
        return Err(Error::TensorMagic);
    }
    let mut pos = 4;
    let rank = take_u32(&data, &mut pos)?;
    if rank != 2 && rank != 3 {
        return Err(Error::TensorRank { rank });
    }
    let height = take_u32(&data, &mut pos)?;
    let width = take_u32(&data, &mut pos)?;
    let labels = if rank == 3 { take_u32(&data, &mut pos)? } else { 1 };
    if height == 0 || width == 0 || labels == 0 {
        return Err(Error::TensorZeroDimension);
    }
    let count = (height as usize) * (width as usize) * (labels as usize);
    let expected = pos + count * 4;
    if data.len() < expected {
        return Err(Error::TensorTruncated {
            expected,
            got: data.len(),
        });
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in data[pos..expected].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::TensorNonFinite { index: i });
        }
        values.push(v);
    }
    if rank == 2 {
        Ok(Tensor::Heatmap(PerspectiveHeatmap::new(width, height, values)?))
    } else {
        Ok(Tensor::Scores(ScoreMap::new(
            width,
            height,
            labels as usize,
            values,
        )?))
    }
}

fn write_raw(path: &Path, dims: &[u32], values: &[f32]) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 4 + dims.len() * 4 + values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &out).map_err(|e| Error::io(path, e))
}

pub fn write_heatmap(path: &Path, heatmap: &PerspectiveHeatmap) -> Result<()> {
    write_raw(path, &[heatmap.height(), heatmap.width()], heatmap.values())
}

pub fn write_scores(path: &Path, scores: &ScoreMap) -> Result<()> {
    write_raw(
        path,
        &[scores.height(), scores.width(), scores.num_labels() as u32],
        scores.scores(),
    )
}

/// Writes whichever rank the tensor holds.
pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    match tensor {
        Tensor::Heatmap(h) => write_heatmap(path, h),
        Tensor::Scores(s) => write_scores(path, s),
    }
}
