//! Perspective heatmap construction and fovea-region localization.
//!
//! The heatmap scores each pixel by how much smaller its instance is than
//! the class average, so far-away (projectively shrunken) objects light up.
//! A dataset-level prior stabilizes single-image estimates, and a max
//! average-pool over the combined map picks the fovea region.

use serde::{Deserialize, Serialize};

use crate::dataio::{ClassDef, ClassTable, InstanceSet, PerspectiveHeatmap};
use crate::error::{Error, Result};
use crate::resample::bilinear_plane;

/// Controls ground-truth heatmap construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapGtConfig {
    /// Weight of the dataset-level prior added on top of the per-image map.
    pub delta: f64,
    /// Value assigned to pixels covered by no instance.
    pub background_value: f32,
}

impl Default for HeatmapGtConfig {
    fn default() -> Self {
        HeatmapGtConfig {
            delta: 1.0,
            background_value: 0.0,
        }
    }
}

impl HeatmapGtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid(
                "heatmap config",
                format!("delta {} must be finite and >= 0", self.delta),
            ));
        }
        if !(self.background_value >= 0.0) || !self.background_value.is_finite() {
            return Err(Error::invalid(
                "heatmap config",
                format!(
                    "background_value {} must be finite and >= 0",
                    self.background_value
                ),
            ));
        }
        Ok(())
    }
}

/// The localized fovea window and its mean heatmap score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoveaRect {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
    pub mean_score: f64,
}

impl FoveaRect {
    pub fn x1(&self) -> u32 {
        self.x0 + self.width
    }

    pub fn y1(&self) -> u32 {
        self.y0 + self.height
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }
}

/// Measures per-class mean instance area over a dataset and returns a table
/// with those averages filled in. Classes never observed keep whatever
/// avg_size they already had. Zero-area instances (fully occluded after
/// overlap resolution) carry no size evidence and are excluded.
pub fn compute_average_sizes(dataset: &[InstanceSet], table: &ClassTable) -> Result<ClassTable> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput {
            what: "instance dataset".into(),
        });
    }
    let mut sums: std::collections::HashMap<u16, (f64, u64)> = std::collections::HashMap::new();
    for set in dataset {
        for inst in set.instances() {
            table.require(inst.class_id)?;
            if inst.area == 0 {
                continue;
            }
            let entry = sums.entry(inst.class_id).or_insert((0.0, 0));
            entry.0 += inst.area as f64;
            entry.1 += 1;
        }
    }
    let classes = table
        .classes()
        .iter()
        .map(|def| {
            let avg_size = match sums.get(&def.id) {
                Some(&(sum, count)) => Some(sum / count as f64),
                None => def.avg_size,
            };
            ClassDef {
                avg_size,
                ..def.clone()
            }
        })
        .collect();
    ClassTable::new(classes)
}

/// Builds the per-image ground-truth heatmap: each instance pixel scores
/// avg_size(class) / area(instance), uncovered pixels score the configured
/// background value. The ratio is computed once per instance in f64 and
/// narrowed to f32, so recomputing it from the annotation reproduces the
/// stored value bit-exactly.
pub fn heatmap_h(
    instances: &InstanceSet,
    table: &ClassTable,
    cfg: &HeatmapGtConfig,
) -> Result<PerspectiveHeatmap> {
    cfg.validate()?;
    let (w, h) = (instances.width(), instances.height());
    let mut values = vec![cfg.background_value; (w as usize) * (h as usize)];
    for (idx, inst) in instances.instances().iter().enumerate() {
        if inst.area == 0 {
            return Err(Error::ZeroAreaInstance { index: idx });
        }
        let avg = table.avg_size(inst.class_id)?;
        let ratio = (avg / inst.area as f64) as f32;
        for run in &inst.runs {
            let base = (run.y as usize) * (w as usize);
            for x in run.x0..run.x1 {
                values[base + x as usize] = ratio;
            }
        }
    }
    PerspectiveHeatmap::new(w, h, values)
}

/// Averages a set of heatmaps into a dataset-level prior at a canonical
/// resolution. Each map is bilinearly resampled first; the mean is taken
/// per pixel in input order.
pub fn global_prior(
    heatmaps: &[PerspectiveHeatmap],
    out_width: u32,
    out_height: u32,
) -> Result<PerspectiveHeatmap> {
    if heatmaps.is_empty() {
        return Err(Error::EmptyInput {
            what: "heatmap list".into(),
        });
    }
    if out_width == 0 || out_height == 0 {
        return Err(Error::invalid("global prior", "zero output dimension"));
    }
    let n = (out_width as usize) * (out_height as usize);
    let mut acc = vec![0.0f64; n];
    for hm in heatmaps {
        let plane = if hm.width() == out_width && hm.height() == out_height {
            hm.values().to_vec()
        } else {
            bilinear_plane(
                hm.values(),
                hm.width() as usize,
                hm.height() as usize,
                out_width as usize,
                out_height as usize,
            )
        };
        for (a, v) in acc.iter_mut().zip(&plane) {
            *a += *v as f64;
        }
    }
    let inv = 1.0 / heatmaps.len() as f64;
    let values = acc.iter().map(|&a| (a * inv) as f32).collect();
    PerspectiveHeatmap::new(out_width, out_height, values)
}

/// Combines the per-image map with the dataset prior: V = H + delta * G.
pub fn heatmap_v(
    h: &PerspectiveHeatmap,
    g: &PerspectiveHeatmap,
    delta: f64,
) -> Result<PerspectiveHeatmap> {
    if h.width() != g.width() || h.height() != g.height() {
        return Err(Error::DimensionMismatch {
            what: "prior heatmap".into(),
            want_w: h.width(),
            want_h: h.height(),
            got_w: g.width(),
            got_h: g.height(),
        });
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(
            "heatmap combination",
            format!("delta {delta} must be finite and >= 0"),
        ));
    }
    let values = h
        .values()
        .iter()
        .zip(g.values())
        .map(|(&hv, &gv)| (hv as f64 + delta * gv as f64) as f32)
        .collect();
    PerspectiveHeatmap::new(h.width(), h.height(), values)
}

/// Smoothed l1 regression loss between predicted and target heatmaps:
/// mean over pixels of 0.5x^2 for |x| < 1, |x| - 0.5 otherwise.
pub fn smoothed_l1(pred: &PerspectiveHeatmap, gt: &PerspectiveHeatmap) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch {
            what: "loss operands".into(),
            want_w: gt.width(),
            want_h: gt.height(),
            got_w: pred.width(),
            got_h: pred.height(),
        });
    }
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| {
            let x = (p as f64 - g as f64).abs();
            if x < 1.0 {
                0.5 * x * x
            } else {
                x - 0.5
            }
        })
        .sum();
    Ok(sum / pred.values().len() as f64)
}

/// Slides a window of size round(frac * dim) over the heatmap with the given
/// stride (final row/column positions are always probed, even off-stride)
/// and returns the window with the maximal mean value. Ties go to the
/// smallest y0, then the smallest x0. Every window sums its pixels in the
/// same row-major order, so equal-content windows compare exactly equal.
pub fn locate_fovea(
    heatmap: &PerspectiveHeatmap,
    win_frac_w: f64,
    win_frac_h: f64,
    stride: u32,
) -> Result<FoveaRect> {
    for (name, frac) in [("win_frac_w", win_frac_w), ("win_frac_h", win_frac_h)] {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::InvalidParam {
                what: name.into(),
                detail: format!("{frac} outside (0, 1]"),
            });
        }
    }
    if stride == 0 {
        return Err(Error::InvalidParam {
            what: "stride".into(),
            detail: "must be >= 1".into(),
        });
    }
    let (w, h) = (heatmap.width(), heatmap.height());
    let win_w = ((win_frac_w * w as f64).round() as u32).max(1);
    let win_h = ((win_frac_h * h as f64).round() as u32).max(1);
    if win_w > w || win_h > h {
        return Err(Error::WindowTooLarge {
            win_w,
            win_h,
            width: w,
            height: h,
        });
    }

    let positions = |limit: u32| -> Vec<u32> {
        let mut pos: Vec<u32> = (0..=limit).step_by(stride as usize).collect();
        if *pos.last().expect("range 0..=limit is never empty") != limit {
            pos.push(limit);
        }
        pos
    };
    let ys = positions(h - win_h);
    let xs = positions(w - win_w);

    let mut best: Option<(f64, u32, u32)> = None;
    for &y0 in &ys {
        for &x0 in &xs {
            let mut sum = 0.0f64;
            for y in y0..y0 + win_h {
                let base = (y as usize) * (w as usize);
                for x in x0..x0 + win_w {
                    sum += heatmap.values()[base + x as usize] as f64;
                }
            }
            match best {
                Some((best_sum, _, _)) if sum <= best_sum => {}
                _ => best = Some((sum, y0, x0)),
            }
        }
    }
    let (sum, y0, x0) = best.expect("at least one window position exists");
    Ok(FoveaRect {
        x0,
        y0,
        width: win_w,
        height: win_h,
        mean_score: sum / ((win_w as u64 * win_h as u64) as f64),
    })
}
