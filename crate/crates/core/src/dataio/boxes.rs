//! Detection box ingestion.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::dataio::DetectionBox;
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
    score: f64,
    class_id: u16,
}

/// Reads a JSON array of detection boxes and clamps each to the
/// `width` x `height` image. Boxes left with zero area by clamping are
/// dropped with a warning; input order is preserved otherwise.
pub fn read_boxes(path: &Path, width: u32, height: u32) -> Result<Vec<DetectionBox>> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<RawBox> =
        serde_json::from_str(&data).map_err(|e| Error::json(path, e.to_string()))?;
    let mut boxes = Vec::with_capacity(raw.len());
    for rb in raw {
        if !(0.0..=1.0).contains(&rb.score) || !rb.score.is_finite() {
            return Err(Error::BoxScore { score: rb.score });
        }
        if rb.x1 <= rb.x0 || rb.y1 <= rb.y0 {
            return Err(Error::BoxDegenerate {
                x0: rb.x0,
                y0: rb.y0,
                x1: rb.x1,
                y1: rb.y1,
            });
        }
        let x0 = rb.x0.clamp(0, width as i64) as u32;
        let x1 = rb.x1.clamp(0, width as i64) as u32;
        let y0 = rb.y0.clamp(0, height as i64) as u32;
        let y1 = rb.y1.clamp(0, height as i64) as u32;
        if x1 <= x0 || y1 <= y0 {
            log::warn!(
                "dropping box ({},{})-({},{}): no overlap with {}x{} image",
                rb.x0,
                rb.y0,
                rb.x1,
                rb.y1,
                width,
                height
            );
            continue;
        }
        boxes.push(DetectionBox {
            x0,
            y0,
            x1,
            y1,
            score: rb.score,
            class_id: rb.class_id,
        });
    }
    Ok(boxes)
}

/// Serializes boxes back to the on-disk JSON schema.
pub fn write_boxes(path: &Path, boxes: &[DetectionBox]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(boxes).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
