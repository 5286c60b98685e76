//! Spatial-support compatibility: how strongly a pixel pair inside a
//! detection box is coupled, scaled by the box's heatmap statistics.

use crate::crf::CrfParams;
use crate::dataio::{DetectionBox, PerspectiveHeatmap};

/// Precomputed heatmap sums for fast repeated coupling queries.
///
/// For a pair sharing at least one box, the highest-scoring shared box B
/// (ties: first in input order) yields
///
///   mu = clamp(score(B) * global_mean / max(box_mean, epsilon), 0, mu_max)
///
/// computed as a single division (sum_global * |B|) / (sum_box * N) so that
/// scaling every heatmap value by an exactly-representable factor cancels
/// bit-exactly. Pairs sharing no box get `mu_fallback`.
pub struct MuEvaluator<'a> {
    boxes: &'a [DetectionBox],
    params: &'a CrfParams,
    global_sum: f64,
    n_pixels: f64,
    box_sums: Vec<f64>,
    box_areas: Vec<f64>,
}

impl<'a> MuEvaluator<'a> {
    pub fn new(
        boxes: &'a [DetectionBox],
        heatmap: &'a PerspectiveHeatmap,
        params: &'a CrfParams,
    ) -> Self {
        let global_sum: f64 = heatmap.values().iter().map(|&v| v as f64).sum();
        let box_sums: Vec<f64> = boxes
            .iter()
            .map(|b| {
                let mut sum = 0.0f64;
                for y in b.y0..b.y1 {
                    for x in b.x0..b.x1 {
                        sum += heatmap.get(x, y) as f64;
                    }
                }
                sum
            })
            .collect();
        let box_areas = boxes.iter().map(|b| b.pixel_count() as f64).collect();
        MuEvaluator {
            boxes,
            params,
            global_sum,
            n_pixels: heatmap.values().len() as f64,
            box_sums,
            box_areas,
        }
    }

    /// Index of the highest-scoring box containing both pixels, if any.
    #[inline]
    pub fn shared_box(&self, pi: (u32, u32), pj: (u32, u32)) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, b) in self.boxes.iter().enumerate() {
            if b.contains(pi.0, pi.1) && b.contains(pj.0, pj.1) {
                match best {
                    Some(cur) if self.boxes[cur].score >= b.score => {}
                    _ => best = Some(k),
                }
            }
        }
        best
    }

    /// Coupling strength given a known shared box index.
    #[inline]
    pub fn mu_for_box(&self, k: usize) -> f64 {
        let box_mean = self.box_sums[k] / self.box_areas[k];
        let ratio = if box_mean > self.params.epsilon_mean {
            (self.global_sum * self.box_areas[k]) / (self.box_sums[k] * self.n_pixels)
        } else {
            (self.global_sum / self.n_pixels) / self.params.epsilon_mean
        };
        (self.boxes[k].score * ratio).clamp(0.0, self.params.mu_max)
    }

    /// Coupling strength for an arbitrary pixel pair.
    #[inline]
    pub fn mu(&self, pi: (u32, u32), pj: (u32, u32)) -> f64 {
        match self.shared_box(pi, pj) {
            Some(k) => self.mu_for_box(k),
            None => self.params.mu_fallback,
        }
    }
}

/// One-off coupling query; builds the evaluator internally.
pub fn mu(
    pi: (u32, u32),
    pj: (u32, u32),
    boxes: &[DetectionBox],
    heatmap: &PerspectiveHeatmap,
    params: &CrfParams,
) -> f64 {
    MuEvaluator::new(boxes, heatmap, params).mu(pi, pj)
}
