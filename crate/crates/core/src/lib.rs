//! Perspective-aware scene parsing toolkit.
//!
//! The crate covers the non-neural core of a two-pass urban parsing system:
//! estimating where distant small objects concentrate (the perspective
//! heatmap), zooming the parser into that region (the fovea), fusing coarse
//! and fovea predictions, and sharpening the result with a detection-guided
//! dense CRF. A synthetic scene generator and region-aware IoU metrics make
//! the whole chain testable end to end without any real imagery.

#[cfg(feature = "cli")]
pub mod cli;
pub mod crf;
pub mod dataio;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod perspective;
mod resample;
pub mod synth;

pub use dataio::{
    ClassDef, ClassTable, DetectionBox, Instance, InstanceSet, LabelMap, PerspectiveHeatmap,
    PixelRun, RgbImage, ScoreMap, IGNORE_LABEL,
};
pub use error::{Error, Result};
