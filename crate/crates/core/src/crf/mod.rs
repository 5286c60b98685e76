//! Detection-guided dense CRF over pixel labelings.
//!
//! The pairwise potential couples pixel pairs inside detection boxes with a
//! strength scaled by how far the box's heatmap statistics sit below the
//! image average, so large nearby objects get smoothed aggressively while
//! small distant ones are left alone.

mod inference;
mod mu;
mod tune;

pub use inference::{energy, exact_map, mean_field, mean_field_observed, refine};
pub use mu::{mu, MuEvaluator};
pub use tune::{grid_search, GridSearchOutcome, GridStats, ValCase};

use serde::{Deserialize, Serialize};

use crate::dataio::{LabelMap, RgbImage, ScoreMap};
use crate::error::{Error, Result};

/// Pairwise-potential and inference parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfParams {
    /// Appearance (position + color) kernel weight.
    pub w1: f64,
    /// Smoothness (position only) kernel weight.
    pub w2: f64,
    /// Spatial bandwidth of the appearance kernel.
    pub theta_alpha: f64,
    /// Color bandwidth of the appearance kernel.
    pub theta_beta: f64,
    /// Spatial bandwidth of the smoothness kernel.
    pub theta_gamma: f64,
    /// Mean-field iterations; 0 returns the unary softmax unchanged.
    pub iterations: u32,
    /// Coupling strength for pairs not sharing any detection box.
    pub mu_fallback: f64,
    /// Upper clamp on the coupling strength.
    pub mu_max: f64,
    /// Floor for the box heatmap mean in the coupling ratio.
    pub epsilon_mean: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            w1: 1.0,
            w2: 2.0,
            theta_alpha: 20.0,
            theta_beta: 24.0,
            theta_gamma: 20.0,
            iterations: 10,
            mu_fallback: 0.0,
            mu_max: 1e4,
            epsilon_mean: 1e-6,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, f64, bool); 8] = [
            ("w1", self.w1, self.w1 >= 0.0),
            ("w2", self.w2, self.w2 >= 0.0),
            ("theta_alpha", self.theta_alpha, self.theta_alpha > 0.0),
            ("theta_beta", self.theta_beta, self.theta_beta > 0.0),
            ("theta_gamma", self.theta_gamma, self.theta_gamma > 0.0),
            ("mu_fallback", self.mu_fallback, self.mu_fallback >= 0.0),
            ("mu_max", self.mu_max, self.mu_max > 0.0),
            ("epsilon_mean", self.epsilon_mean, self.epsilon_mean > 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(Error::InvalidParam {
                    what: name.into(),
                    detail: format!("{value} out of range"),
                });
            }
        }
        Ok(())
    }
}

/// Per-pixel feature: 2D position and RGB color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFeature {
    pub pos: [f64; 2],
    pub color: [f64; 3],
}

/// Row-major feature vector for every pixel of an image.
pub fn features_from_image(image: &RgbImage) -> Vec<PixelFeature> {
    let mut features =
        Vec::with_capacity((image.width() as usize) * (image.height() as usize));
    for y in 0..image.height() {
        for x in 0..image.width() {
            let c = image.get(x, y);
            features.push(PixelFeature {
                pos: [x as f64, y as f64],
                color: [c[0] as f64, c[1] as f64, c[2] as f64],
            });
        }
    }
    features
}

/// Contrast-sensitive two-kernel potential: a bilateral position+color
/// Gaussian plus a position-only Gaussian.
#[inline]
pub fn kappa(fi: &PixelFeature, fj: &PixelFeature, params: &CrfParams) -> f64 {
    let dp2 = (fi.pos[0] - fj.pos[0]).powi(2) + (fi.pos[1] - fj.pos[1]).powi(2);
    let dc2 = (fi.color[0] - fj.color[0]).powi(2)
        + (fi.color[1] - fj.color[1]).powi(2)
        + (fi.color[2] - fj.color[2]).powi(2);
    let appearance = (-dp2 / (2.0 * params.theta_alpha * params.theta_alpha)
        - dc2 / (2.0 * params.theta_beta * params.theta_beta))
        .exp();
    let smoothness = (-dp2 / (2.0 * params.theta_gamma * params.theta_gamma)).exp();
    params.w1 * appearance + params.w2 * smoothness
}

/// Converts raw scores to unary potentials: -log softmax per pixel, with
/// max subtraction for stability. Output values are always >= 0.
pub fn unary_from_scores(scores: &ScoreMap) -> ScoreMap {
    let labels = scores.num_labels();
    let mut out = Vec::with_capacity(scores.scores().len());
    for px in scores.scores().chunks_exact(labels) {
        let max = px.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let log_sum: f64 = px
            .iter()
            .map(|&s| (s as f64 - max).exp())
            .sum::<f64>()
            .ln();
        for &s in px {
            out.push(((max + log_sum) - s as f64) as f32);
        }
    }
    ScoreMap::new(scores.width(), scores.height(), labels, out)
        .expect("unary preserves dimensions and finiteness")
}

/// Per-pixel label distribution from mean-field inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    width: u32,
    height: u32,
    num_labels: usize,
    q: Vec<f64>,
}

impl Marginals {
    pub(crate) fn from_q(width: u32, height: u32, num_labels: usize, q: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), (width as usize) * (height as usize) * num_labels);
        Marginals {
            width,
            height,
            num_labels,
            q,
        }
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

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, label: usize) -> f64 {
        self.q[((y as usize) * (self.width as usize) + x as usize) * self.num_labels + label]
    }

    /// Checks each pixel's distribution is non-negative and sums to 1.
    pub fn validate(&self) -> Result<()> {
        for (i, px) in self.q.chunks_exact(self.num_labels).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Internal(format!(
                    "marginal at pixel {i} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(())
    }

    /// Per-pixel argmax; ties resolve to the lowest label id.
    pub fn argmax_labels(&self) -> LabelMap {
        let mut labels = Vec::with_capacity((self.width as usize) * (self.height as usize));
        for px in self.q.chunks_exact(self.num_labels) {
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
