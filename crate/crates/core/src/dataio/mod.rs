//! On-disk formats and ingestion for label maps, score tensors, heatmaps,
//! instance annotations, detection boxes, and class tables.
//!
//! All types are immutable after construction and cheap to share across
//! threads. Readers and writers are bit-exact inverses on valid data.

mod annotations;
mod boxes;
mod classtable;
mod netpbm;
mod tensor;

pub use annotations::ingest_polygon_annotations;
pub use boxes::{read_boxes, write_boxes};
pub use classtable::{read_class_table, write_class_table, ClassDef, ClassTable};
#[cfg(test)]
pub(crate) use classtable::test_table;
pub use netpbm::{read_label_map, read_ppm, write_label_map, write_ppm};
pub use tensor::{read_tensor, write_heatmap, write_scores, write_tensor, Tensor};

use crate::error::{Error, Result};

/// Reserved label value marking pixels excluded from every statistic.
/// Stored as the PGM maxval (65535) on disk.
pub const IGNORE_LABEL: u16 = u16::MAX;

/// Per-pixel integer class IDs with a reserved ignore value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u16>,
    ignore_id: u16,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, labels: Vec<u16>) -> Result<Self> {
        Self::with_ignore(width, height, labels, IGNORE_LABEL)
    }

    pub fn with_ignore(width: u32, height: u32, labels: Vec<u16>, ignore_id: u16) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("label map", "zero dimension"));
        }
        if labels.len() != (width as usize) * (height as usize) {
            return Err(Error::invalid(
                "label map",
                format!(
                    "label buffer holds {} values, expected {}",
                    labels.len(),
                    (width as usize) * (height as usize)
                ),
            ));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
            ignore_id,
        })
    }

    /// Constant map filled with one label.
    pub fn filled(width: u32, height: u32, label: u16) -> Result<Self> {
        Self::new(width, height, vec![label; (width as usize) * (height as usize)])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn ignore_id(&self) -> u16 {
        self.ignore_id
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.labels[(y as usize) * (self.width as usize) + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, label: u16) {
        self.labels[(y as usize) * (self.width as usize) + x as usize] = label;
    }

    #[inline]
    pub fn is_ignored(&self, x: u32, y: u32) -> bool {
        self.get(x, y) == self.ignore_id
    }

    pub fn pixel_count(&self) -> usize {
        self.labels.len()
    }
}

/// Per-pixel, per-label real scores: classifier output or CRF unaries.
/// Row-major (height, width, labels) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    num_labels: usize,
    scores: Vec<f32>,
}

impl ScoreMap {
    pub fn new(width: u32, height: u32, num_labels: usize, scores: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("score map", "zero dimension"));
        }
        if num_labels < 2 {
            return Err(Error::invalid(
                "score map",
                format!("num_labels is {num_labels}, need at least 2"),
            ));
        }
        let expected = (width as usize) * (height as usize) * num_labels;
        if scores.len() != expected {
            return Err(Error::invalid(
                "score map",
                format!("score buffer holds {} values, expected {expected}", scores.len()),
            ));
        }
        if let Some(idx) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::TensorNonFinite { index: idx });
        }
        Ok(ScoreMap {
            width,
            height,
            num_labels,
            scores,
        })
    }

    pub fn zeros(width: u32, height: u32, num_labels: usize) -> Result<Self> {
        Self::new(
            width,
            height,
            num_labels,
            vec![0.0; (width as usize) * (height as usize) * num_labels],
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let base = ((y as usize) * (self.width as usize) + x as usize) * self.num_labels;
        &self.scores[base..base + self.num_labels]
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, label: usize) -> f32 {
        self.scores[((y as usize) * (self.width as usize) + x as usize) * self.num_labels + label]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, label: usize, value: f32) {
        self.scores
            [((y as usize) * (self.width as usize) + x as usize) * self.num_labels + label] = value;
    }

    /// Per-pixel argmax over labels; ties resolve to the lowest label id.
    pub fn argmax_labels(&self) -> LabelMap {
        let mut labels = Vec::with_capacity((self.width as usize) * (self.height as usize));
        for px in self.scores.chunks_exact(self.num_labels) {
            let mut best = 0usize;
            for (l, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = l;
                }
            }
            labels.push(best as u16);
        }
        LabelMap::new(self.width, self.height, labels).expect("argmax preserves dimensions")
    }
}

/// Per-pixel non-negative score indicating nearness to the vanishing point.
#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveHeatmap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl PerspectiveHeatmap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("heatmap", "zero dimension"));
        }
        if values.len() != (width as usize) * (height as usize) {
            return Err(Error::invalid(
                "heatmap",
                format!(
                    "value buffer holds {} values, expected {}",
                    values.len(),
                    (width as usize) * (height as usize)
                ),
            ));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::TensorNonFinite { index: i });
            }
            if v < 0.0 {
                return Err(Error::HeatmapNegative { index: i, value: v });
            }
        }
        Ok(PerspectiveHeatmap {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; (width as usize) * (height as usize)])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Arithmetic mean over every pixel.
    pub fn mean(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|&v| v as f64).sum();
        sum / self.values.len() as f64
    }
}

/// 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", "zero dimension"));
        }
        if data.len() != (width as usize) * (height as usize) * 3 {
            return Err(Error::invalid(
                "image",
                format!(
                    "pixel buffer holds {} bytes, expected {}",
                    data.len(),
                    (width as usize) * (height as usize) * 3
                ),
            ));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity((width as usize) * (height as usize) * 3);
        for _ in 0..(width as usize) * (height as usize) {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let base = ((y as usize) * (self.width as usize) + x as usize) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let base = ((y as usize) * (self.width as usize) + x as usize) * 3;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }
}

/// A horizontal run of pixels: row `y`, columns `[x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRun {
    pub y: u32,
    pub x0: u32,
    pub x1: u32,
}

impl PixelRun {
    pub fn len(&self) -> u64 {
        (self.x1 - self.x0) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.x0 == self.x1
    }
}

/// One annotated object instance: class, rasterized region, cached area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub class_id: u16,
    pub area: u64,
    pub runs: Vec<PixelRun>,
}

impl Instance {
    pub fn from_runs(class_id: u16, runs: Vec<PixelRun>) -> Self {
        let area = runs.iter().map(PixelRun::len).sum();
        Instance {
            class_id,
            area,
            runs,
        }
    }

    /// Axis-aligned rectangle instance covering `[x0,x1) x [y0,y1)`.
    pub fn rect(class_id: u16, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        let runs = (y0..y1).map(|y| PixelRun { y, x0, x1 }).collect();
        Instance::from_runs(class_id, runs)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.runs
            .iter()
            .flat_map(|r| (r.x0..r.x1).map(move |x| (x, r.y)))
    }

    /// Tight bounding rectangle `(x0, y0, x1, y1)`, half-open; `None` for an
    /// instance with no pixels.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut out: Option<(u32, u32, u32, u32)> = None;
        for r in &self.runs {
            if r.is_empty() {
                continue;
            }
            out = Some(match out {
                None => (r.x0, r.y, r.x1, r.y + 1),
                Some((x0, y0, x1, y1)) => {
                    (x0.min(r.x0), y0.min(r.y), x1.max(r.x1), y1.max(r.y + 1))
                }
            });
        }
        out
    }
}

/// Instance annotations for one image. Regions of distinct instances are
/// disjoint: ingestion resolves overlap by file order, later instance wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSet {
    width: u32,
    height: u32,
    instances: Vec<Instance>,
}

impl InstanceSet {
    pub fn new(width: u32, height: u32, instances: Vec<Instance>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("instance set", "zero dimension"));
        }
        for (idx, inst) in instances.iter().enumerate() {
            for run in &inst.runs {
                if run.x1 > width || run.y >= height || run.x0 > run.x1 {
                    return Err(Error::invalid(
                        "instance set",
                        format!("instance {idx} run out of bounds"),
                    ));
                }
            }
            let area: u64 = inst.runs.iter().map(PixelRun::len).sum();
            if area != inst.area {
                return Err(Error::invalid(
                    "instance set",
                    format!("instance {idx} cached area {} != rasterized {area}", inst.area),
                ));
            }
        }
        Ok(InstanceSet {
            width,
            height,
            instances,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    /// Per-pixel owning instance index, -1 where no instance covers the pixel.
    pub fn id_map(&self) -> Vec<i32> {
        let mut map = vec![-1i32; (self.width as usize) * (self.height as usize)];
        for (idx, inst) in self.instances.iter().enumerate() {
            for run in &inst.runs {
                let base = (run.y as usize) * (self.width as usize);
                for x in run.x0..run.x1 {
                    map[base + x as usize] = idx as i32;
                }
            }
        }
        map
    }

    /// Paint instance classes over a background label.
    pub fn label_map(&self, background: u16) -> LabelMap {
        let mut labels = vec![background; (self.width as usize) * (self.height as usize)];
        for inst in &self.instances {
            for run in &inst.runs {
                let base = (run.y as usize) * (self.width as usize);
                for x in run.x0..run.x1 {
                    labels[base + x as usize] = inst.class_id;
                }
            }
        }
        LabelMap::new(self.width, self.height, labels).expect("dimensions preserved")
    }
}

/// Axis-aligned detection rectangle, half-open pixel coordinates, clamped to
/// the image it was read against.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DetectionBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub score: f64,
    pub class_id: u16,
}

impl DetectionBox {
    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn pixel_count(&self) -> u64 {
        ((self.x1 - self.x0) as u64) * ((self.y1 - self.y0) as u64)
    }
}
