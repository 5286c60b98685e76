//! Validation-driven parameter selection for the refinement stage.

use crate::crf::{refine, CrfParams};
use crate::dataio::{ClassTable, DetectionBox, InstanceSet, LabelMap, PerspectiveHeatmap, RgbImage, ScoreMap};
use crate::error::{Error, Result};
use crate::metrics::{accumulate, iou, ConfusionAccumulator, MetricLevel, RegionMask};

/// One validation example: everything refinement needs plus ground truth.
#[derive(Debug, Clone)]
pub struct ValCase {
    pub scores: ScoreMap,
    pub image: RgbImage,
    pub boxes: Vec<DetectionBox>,
    pub heatmap: PerspectiveHeatmap,
    pub gt: LabelMap,
    pub instances: InstanceSet,
}

/// Score of one evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStats {
    pub params: CrfParams,
    /// Mean class IoU over the validation set; absent when no class had any
    /// counted pixel.
    pub mean_iou: Option<f64>,
}

/// Winning grid point plus the full score table in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchOutcome {
    pub best: CrfParams,
    pub best_index: usize,
    pub table: Vec<GridStats>,
}

/// Runs refinement with every parameter set in `params_grid` over `val_set`
/// and picks the one with the highest mean class IoU. Ties keep the earliest
/// grid point. The full per-point score table is returned alongside the
/// winner.
pub fn grid_search(
    params_grid: &[CrfParams],
    val_set: &[ValCase],
    table: &ClassTable,
) -> Result<GridSearchOutcome> {
    if params_grid.is_empty() {
        return Err(Error::EmptyInput {
            what: "parameter grid".into(),
        });
    }
    if val_set.is_empty() {
        return Err(Error::EmptyInput {
            what: "validation set".into(),
        });
    }
    let mut stats = Vec::with_capacity(params_grid.len());
    let mut best_index = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (idx, params) in params_grid.iter().enumerate() {
        params.validate()?;
        let mut acc = ConfusionAccumulator::new(table);
        for case in val_set {
            let pred = refine(
                &case.scores,
                &case.image,
                &case.boxes,
                &case.heatmap,
                params,
            )?;
            let mask = RegionMask::full(case.gt.width(), case.gt.height());
            accumulate(&pred, &case.gt, &case.instances, table, &mask, &mut acc)?;
        }
        let mean_iou = iou(&acc, MetricLevel::Class).mean;
        if let Some(score) = mean_iou {
            if score > best_score {
                best_score = score;
                best_index = idx;
            }
        }
        stats.push(GridStats {
            params: params.clone(),
            mean_iou,
        });
    }
    if best_score == f64::NEG_INFINITY {
        return Err(Error::invalid(
            "grid search",
            "no grid point produced a scoreable prediction".to_string(),
        ));
    }
    Ok(GridSearchOutcome {
        best: params_grid[best_index].clone(),
        best_index,
        table: stats,
    })
}
