//! Segmentation quality metrics: per-class and per-category IoU, the
//! instance-size-weighted iIoU variant, and region masks for evaluating the
//! image center and periphery separately.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{ClassTable, InstanceSet, LabelMap, IGNORE_LABEL};
use crate::error::{Error, Result};

/// Which pixels an evaluation pass looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Full,
    Central,
    Peripheral,
}

/// Per-pixel inclusion mask tagged with the region it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    width: u32,
    height: u32,
    kind: RegionKind,
    mask: Vec<bool>,
}

impl RegionMask {
    /// Mask that includes every pixel.
    pub fn full(width: u32, height: u32) -> Self {
        RegionMask {
            width,
            height,
            kind: RegionKind::Full,
            mask: vec![true; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn is_included(&self, x: u32, y: u32) -> bool {
        self.mask[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Number of included pixels.
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Builds a region mask. The central region is an axis-centered rectangle of
/// `floor(central_frac * width)` by `floor(central_frac * height)` pixels,
/// offset by integer division so any leftover border splits evenly (extra
/// pixel on the right/bottom). Peripheral is its exact complement, so the two
/// always partition the image. `central_frac` must lie strictly in (0, 1)
/// for central/peripheral masks and is ignored for full masks.
pub fn make_region_mask(
    width: u32,
    height: u32,
    kind: RegionKind,
    central_frac: f64,
) -> Result<RegionMask> {
    if kind == RegionKind::Full {
        return Ok(RegionMask::full(width, height));
    }
    if !(central_frac.is_finite() && central_frac > 0.0 && central_frac < 1.0) {
        return Err(Error::invalid(
            "central_frac",
            format!("{central_frac} is not strictly between 0 and 1"),
        ));
    }
    let cw = (central_frac * width as f64).floor() as u32;
    let ch = (central_frac * height as f64).floor() as u32;
    let x0 = (width - cw) / 2;
    let y0 = (height - ch) / 2;
    let mut mask = vec![false; (width as usize) * (height as usize)];
    for y in y0..y0 + ch {
        for x in x0..x0 + cw {
            mask[(y as usize) * (width as usize) + x as usize] = true;
        }
    }
    if kind == RegionKind::Peripheral {
        for b in &mut mask {
            *b = !*b;
        }
    }
    Ok(RegionMask {
        width,
        height,
        kind,
        mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct ClassInfo {
    id: u16,
    name: String,
    category: String,
    avg_size: Option<f64>,
    evaluable: bool,
}

/// Streaming confusion statistics. Holds the full ground-truth-by-prediction
/// count matrix plus a parallel instance-weight matrix, which is enough to
/// derive IoU and iIoU at class or category level after the fact. The final
/// matrix column collects predictions that name no known class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionAccumulator {
    classes: Vec<ClassInfo>,
    index: HashMap<u16, usize>,
    /// counts[g * (num + 1) + p], row-major over ground-truth class.
    counts: Vec<u64>,
    /// Same layout; each entry accumulates the instance weights of its pixels.
    weights: Vec<f64>,
}

/// Metric aggregation level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricLevel {
    Class,
    Category,
}

/// One scored row of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    /// Class id for class-level rows; absent for category rows.
    pub id: Option<u16>,
    pub name: String,
    pub value: f64,
}

/// Metric values per class or category plus their unweighted mean. Entries
/// with an empty denominator are omitted, and `mean` is absent when nothing
/// qualified.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTable {
    pub level: MetricLevel,
    pub rows: Vec<MetricRow>,
    pub mean: Option<f64>,
}

impl ConfusionAccumulator {
    pub fn new(table: &ClassTable) -> Self {
        let classes: Vec<ClassInfo> = table
            .classes()
            .iter()
            .map(|c| ClassInfo {
                id: c.id,
                name: c.name.clone(),
                category: c.category.clone(),
                avg_size: c.avg_size,
                evaluable: c.evaluable,
            })
            .collect();
        let index = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id, i))
            .collect();
        let n = classes.len();
        ConfusionAccumulator {
            classes,
            index,
            counts: vec![0; n * (n + 1)],
            weights: vec![0.0; n * (n + 1)],
        }
    }

    fn stride(&self) -> usize {
        self.classes.len() + 1
    }

    /// Folds another accumulator built over the same class table into this
    /// one. Count order never affects the totals, so merging partial passes
    /// (for example per-region or per-shard) is exact.
    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::invalid(
                "confusion merge",
                "accumulators were built over different class tables".to_string(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        Ok(())
    }

    /// Total pixels counted (ground-truth side).
    pub fn total_pixels(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Raw pixel-count matrix, row-major over ground-truth classes in table
    /// order; each row's final column collects predictions that name no
    /// known class.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Instance-weight totals in the same layout as [`counts`](Self::counts).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Scores one image into the accumulator. Pixels outside the mask, with
/// ignore ground truth, or whose ground-truth class is not evaluable are
/// skipped. Every other pixel contributes one count at
/// (ground-truth class, predicted class) and an instance weight: pixels
/// covered by an instance weigh `avg_size(class) / area(instance)`, all
/// others weigh 1. Predictions of the ignore id land in the unknown column.
pub fn accumulate(
    pred: &LabelMap,
    gt: &LabelMap,
    instances: &InstanceSet,
    table: &ClassTable,
    mask: &RegionMask,
    acc: &mut ConfusionAccumulator,
) -> Result<()> {
    let (w, h) = (gt.width(), gt.height());
    for (what, gw, gh) in [
        ("predicted labels", pred.width(), pred.height()),
        ("region mask", mask.width(), mask.height()),
        ("instance set", instances.width(), instances.height()),
    ] {
        if gw != w || gh != h {
            return Err(Error::DimensionMismatch {
                what: what.into(),
                want_w: w,
                want_h: h,
                got_w: gw,
                got_h: gh,
            });
        }
    }
    let expected: Vec<ClassInfo> = table
        .classes()
        .iter()
        .map(|c| ClassInfo {
            id: c.id,
            name: c.name.clone(),
            category: c.category.clone(),
            avg_size: c.avg_size,
            evaluable: c.evaluable,
        })
        .collect();
    if acc.classes != expected {
        return Err(Error::invalid(
            "confusion accumulate",
            "accumulator was built over a different class table".to_string(),
        ));
    }

    // Pixel -> owning instance, later instances winning overlaps, matching
    // how instance sets rasterize to label maps.
    let n = (w as usize) * (h as usize);
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (idx, inst) in instances.instances().iter().enumerate() {
        for run in &inst.runs {
            let row = (run.y as usize) * (w as usize);
            for x in run.x0..run.x1 {
                owner[row + x as usize] = Some(idx);
            }
        }
    }
    // Instance weights resolve lazily so a missing average size only errors
    // once one of that instance's pixels is actually scored.
    let mut inst_weight: Vec<Option<f64>> = vec![None; instances.instances().len()];

    let stride = acc.stride();
    let unknown = acc.classes.len();
    for y in 0..h {
        for x in 0..w {
            if !mask.is_included(x, y) {
                continue;
            }
            let g = gt.get(x, y);
            if g == gt.ignore_id() {
                continue;
            }
            let gi = *acc
                .index
                .get(&g)
                .ok_or(Error::LabelNotInTable { label: g })?;
            if !acc.classes[gi].evaluable {
                continue;
            }
            let p = pred.get(x, y);
            let pi = if p == IGNORE_LABEL {
                unknown
            } else {
                *acc
                    .index
                    .get(&p)
                    .ok_or(Error::LabelNotInTable { label: p })?
            };
            let lin = (y as usize) * (w as usize) + x as usize;
            let weight = match owner[lin] {
                None => 1.0,
                Some(idx) => match inst_weight[idx] {
                    Some(wv) => wv,
                    None => {
                        let inst = &instances.instances()[idx];
                        let avg = table.avg_size(inst.class_id)?;
                        let wv = avg / inst.area as f64;
                        inst_weight[idx] = Some(wv);
                        wv
                    }
                },
            };
            acc.counts[gi * stride + pi] += 1;
            acc.weights[gi * stride + pi] += weight;
        }
    }
    Ok(())
}

/// Groups the accumulator's class rows/columns for the requested level.
/// Returns (group key per class, ordered group labels) where a group label is
/// (class id for class level, display name, group holds an instance-bearing
/// class, group holds an evaluable class).
fn grouping(
    acc: &ConfusionAccumulator,
    level: MetricLevel,
) -> (Vec<usize>, Vec<(Option<u16>, String, bool, bool)>) {
    match level {
        MetricLevel::Class => {
            let groups = acc
                .classes
                .iter()
                .map(|c| {
                    (
                        Some(c.id),
                        c.name.clone(),
                        c.avg_size.is_some(),
                        c.evaluable,
                    )
                })
                .collect();
            ((0..acc.classes.len()).collect(), groups)
        }
        MetricLevel::Category => {
            let mut names: Vec<String> = acc.classes.iter().map(|c| c.category.clone()).collect();
            names.sort();
            names.dedup();
            let key: Vec<usize> = acc
                .classes
                .iter()
                .map(|c| names.iter().position(|n| *n == c.category).unwrap())
                .collect();
            let groups = names
                .into_iter()
                .enumerate()
                .map(|(gi, name)| {
                    let bearing = acc
                        .classes
                        .iter()
                        .zip(&key)
                        .any(|(c, &k)| k == gi && c.avg_size.is_some() && c.evaluable);
                    let evaluable = acc
                        .classes
                        .iter()
                        .zip(&key)
                        .any(|(c, &k)| k == gi && c.evaluable);
                    (None, name, bearing, evaluable)
                })
                .collect();
            (key, groups)
        }
    }
}

/// Remaps the count and weight matrices onto the level's groups. The unknown
/// prediction column stays its own column at index `num_groups`.
fn remap(
    acc: &ConfusionAccumulator,
    key: &[usize],
    num_groups: usize,
) -> (Vec<u64>, Vec<f64>) {
    let stride_in = acc.stride();
    let stride_out = num_groups + 1;
    let mut counts = vec![0u64; num_groups * stride_out];
    let mut weights = vec![0.0f64; num_groups * stride_out];
    for (g, &gk) in key.iter().enumerate() {
        for p in 0..stride_in {
            let pk = if p == acc.classes.len() {
                num_groups
            } else {
                key[p]
            };
            counts[gk * stride_out + pk] += acc.counts[g * stride_in + p];
            weights[gk * stride_out + pk] += acc.weights[g * stride_in + p];
        }
    }
    (counts, weights)
}

fn build_table(
    acc: &ConfusionAccumulator,
    level: MetricLevel,
    instance_weighted: bool,
) -> MetricTable {
    let (key, groups) = grouping(acc, level);
    let stride = groups.len() + 1;
    let (counts, weights) = remap(acc, &key, groups.len());
    let mut rows = Vec::new();
    for (c, (id, name, bearing, evaluable)) in groups.iter().enumerate() {
        if !evaluable || (instance_weighted && !bearing) {
            continue;
        }
        let tp = counts[c * stride + c] as f64;
        let mut fp = 0.0f64;
        for g in 0..groups.len() {
            if g != c {
                fp += counts[g * stride + c] as f64;
            }
        }
        let mut fne = 0.0f64;
        let (tp_term, fn_term) = if instance_weighted {
            for p in 0..stride {
                if p != c {
                    fne += weights[c * stride + p];
                }
            }
            (weights[c * stride + c], fne)
        } else {
            for p in 0..stride {
                if p != c {
                    fne += counts[c * stride + p] as f64;
                }
            }
            (tp, fne)
        };
        let denom = tp_term + fp + fn_term;
        if denom == 0.0 {
            continue;
        }
        rows.push(MetricRow {
            id: *id,
            name: name.clone(),
            value: tp_term / denom,
        });
    }
    let mean = if rows.is_empty() {
        None
    } else {
        Some(rows.iter().map(|r| r.value).sum::<f64>() / rows.len() as f64)
    };
    MetricTable { level, rows, mean }
}

/// Intersection over union per class or category:
/// `TP / (TP + FP + FN)`. Entries whose three counts are all zero are left
/// out of the table and the mean.
pub fn iou(acc: &ConfusionAccumulator, level: MetricLevel) -> MetricTable {
    build_table(acc, level, false)
}

/// Instance-size-weighted IoU: true positives and false negatives on
/// ground-truth pixels are weighted by `avg_size(class) / area(instance)`,
/// false positives stay unweighted, so small instances count as much as
/// large ones. Reported only for classes (or categories containing classes)
/// that carry an average instance size.
pub fn iiou(acc: &ConfusionAccumulator, level: MetricLevel) -> MetricTable {
    build_table(acc, level, true)
}
