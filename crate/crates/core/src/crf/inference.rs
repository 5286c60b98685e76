//! Energy evaluation, mean-field inference, and an exhaustive MAP oracle.

use rayon::prelude::*;

use crate::crf::mu::MuEvaluator;
use crate::crf::{features_from_image, kappa, unary_from_scores, CrfParams, Marginals, PixelFeature};
use crate::dataio::{DetectionBox, LabelMap, PerspectiveHeatmap, RgbImage, ScoreMap};
use crate::error::{Error, Result};

fn check_grids(
    unary: &ScoreMap,
    features: &[PixelFeature],
    heatmap: &PerspectiveHeatmap,
) -> Result<()> {
    if heatmap.width() != unary.width() || heatmap.height() != unary.height() {
        return Err(Error::DimensionMismatch {
            what: "crf heatmap".into(),
            want_w: unary.width(),
            want_h: unary.height(),
            got_w: heatmap.width(),
            got_h: heatmap.height(),
        });
    }
    let n = (unary.width() as usize) * (unary.height() as usize);
    if features.len() != n {
        return Err(Error::invalid(
            "crf features",
            format!("{} features for {n} pixels", features.len()),
        ));
    }
    Ok(())
}

/// Calls `visit(i, j, mu_ij)` once per unordered coupled pixel pair (i < j,
/// row-major linear indices).
///
/// With a positive fallback every pair couples, so all pairs are visited.
/// With fallback 0 only pairs sharing a detection box couple; those are
/// enumerated box by box, deduplicated by charging each pair to the
/// lowest-index box containing both pixels. Either way the coupling value
/// comes from the highest-scoring shared box, independent of the
/// enumeration, so both paths agree on every visited pair.
fn for_each_coupled_pair(
    width: u32,
    height: u32,
    boxes: &[DetectionBox],
    mu_eval: &MuEvaluator,
    fallback_is_zero: bool,
    mut visit: impl FnMut(usize, usize, f64),
) {
    let w = width as usize;
    if !fallback_is_zero {
        let n = w * (height as usize);
        for i in 0..n {
            let pi = ((i % w) as u32, (i / w) as u32);
            for j in (i + 1)..n {
                let pj = ((j % w) as u32, (j / w) as u32);
                visit(i, j, mu_eval.mu(pi, pj));
            }
        }
        return;
    }
    for (kb, b) in boxes.iter().enumerate() {
        let shared_lower = |x: u32, y: u32, x2: u32, y2: u32| {
            boxes[..kb]
                .iter()
                .any(|p| p.contains(x, y) && p.contains(x2, y2))
        };
        let cells: Vec<(u32, u32)> = (b.y0..b.y1)
            .flat_map(|y| (b.x0..b.x1).map(move |x| (x, y)))
            .collect();
        for (a, &(xa, ya)) in cells.iter().enumerate() {
            let ia = (ya as usize) * w + xa as usize;
            for &(xb, yb) in &cells[a + 1..] {
                if shared_lower(xa, ya, xb, yb) {
                    continue;
                }
                let ib = (yb as usize) * w + xb as usize;
                let mu_ij = mu_eval.mu((xa, ya), (xb, yb));
                if ia < ib {
                    visit(ia, ib, mu_ij);
                } else {
                    visit(ib, ia, mu_ij);
                }
            }
        }
    }
}

/// Total labeling cost: per-pixel unary potentials plus, for every unordered
/// pair with differing labels, the coupling mu times the feature kernel.
/// Ignore-labeled pixels contribute to neither sum.
pub fn energy(
    labels: &LabelMap,
    unary: &ScoreMap,
    features: &[PixelFeature],
    boxes: &[DetectionBox],
    heatmap: &PerspectiveHeatmap,
    params: &CrfParams,
) -> Result<f64> {
    params.validate()?;
    check_grids(unary, features, heatmap)?;
    if labels.width() != unary.width() || labels.height() != unary.height() {
        return Err(Error::DimensionMismatch {
            what: "crf labels".into(),
            want_w: unary.width(),
            want_h: unary.height(),
            got_w: labels.width(),
            got_h: labels.height(),
        });
    }
    let num_labels = unary.num_labels();
    let mut total = 0.0f64;
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let l = labels.get(x, y);
            if l == labels.ignore_id() {
                continue;
            }
            if (l as usize) >= num_labels {
                return Err(Error::LabelNotInTable { label: l });
            }
            total += unary.get(x, y, l as usize) as f64;
        }
    }
    let mu_eval = MuEvaluator::new(boxes, heatmap, params);
    let flat = labels.labels();
    let ignore = labels.ignore_id();
    for_each_coupled_pair(
        labels.width(),
        labels.height(),
        boxes,
        &mu_eval,
        params.mu_fallback == 0.0,
        |i, j, mu_ij| {
            let (li, lj) = (flat[i], flat[j]);
            if li == ignore || lj == ignore || li == lj {
                return;
            }
            total += mu_ij * kappa(&features[i], &features[j], params);
        },
    );
    Ok(total)
}

fn init_q(unary: &ScoreMap) -> Vec<f64> {
    let labels = unary.num_labels();
    let mut q = Vec::with_capacity(unary.scores().len());
    for px in unary.scores().chunks_exact(labels) {
        let min = px.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let mut sum = 0.0f64;
        let start = q.len();
        for &u in px {
            let v = (-(u as f64 - min)).exp();
            q.push(v);
            sum += v;
        }
        for v in &mut q[start..] {
            *v /= sum;
        }
    }
    q
}

/// Mean-field inference with a Jacobi (parallel) schedule. Every iteration
/// computes all messages from the previous iteration's marginals, then
/// renormalizes; results are bit-stable for fixed inputs.
///
/// `observer` runs after initialization (iteration 0) and after every
/// update, and may abort inference by returning an error.
pub fn mean_field_observed(
    unary: &ScoreMap,
    features: &[PixelFeature],
    boxes: &[DetectionBox],
    heatmap: &PerspectiveHeatmap,
    params: &CrfParams,
    mut observer: impl FnMut(u32, &Marginals) -> Result<()>,
) -> Result<Marginals> {
    params.validate()?;
    check_grids(unary, features, heatmap)?;
    let (w, h) = (unary.width(), unary.height());
    let num_labels = unary.num_labels();
    let n = (w as usize) * (h as usize);
    let psi: Vec<f64> = unary.scores().iter().map(|&v| v as f64).collect();
    let mut q = init_q(unary);
    let mut marginals = Marginals::from_q(w, h, num_labels, q.clone());
    observer(0, &marginals)?;

    let mu_eval = MuEvaluator::new(boxes, heatmap, params);
    let blocked = params.mu_fallback == 0.0;
    let mut messages = vec![0.0f64; n * num_labels];
    for iteration in 1..=params.iterations {
        messages.iter_mut().for_each(|m| *m = 0.0);
        if blocked {
            // Sequential pair sweep: boxes in input order, pairs in scan
            // order, so float accumulation order is fixed.
            for_each_coupled_pair(w, h, boxes, &mu_eval, true, |i, j, mu_ij| {
                let weight = mu_ij * kappa(&features[i], &features[j], params);
                if weight == 0.0 {
                    return;
                }
                for l in 0..num_labels {
                    messages[i * num_labels + l] += weight * q[j * num_labels + l];
                    messages[j * num_labels + l] += weight * q[i * num_labels + l];
                }
            });
        } else {
            // Dense coupling: each pixel's message row only reads q, so rows
            // are independent and the per-row accumulation order is fixed.
            let q_ref = &q;
            let features_ref = &features;
            let mu_ref = &mu_eval;
            messages
                .par_chunks_mut(num_labels)
                .enumerate()
                .for_each(|(i, row)| {
                    let pi = ((i % w as usize) as u32, (i / w as usize) as u32);
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let pj = ((j % w as usize) as u32, (j / w as usize) as u32);
                        let mu_ij = mu_ref.mu(pi, pj);
                        if mu_ij == 0.0 {
                            continue;
                        }
                        let weight = mu_ij * kappa(&features_ref[i], &features_ref[j], params);
                        for l in 0..num_labels {
                            row[l] += weight * q_ref[j * num_labels + l];
                        }
                    }
                });
        }

        let mut next = vec![0.0f64; n * num_labels];
        for i in 0..n {
            let m_row = &messages[i * num_labels..(i + 1) * num_labels];
            let m_total: f64 = m_row.iter().sum();
            // Potts compatibility: the label-compatibility sum collapses to
            // the total message mass minus the label's own message.
            let mut max_a = f64::NEG_INFINITY;
            let a_row: Vec<f64> = (0..num_labels)
                .map(|l| {
                    let a = -psi[i * num_labels + l] - (m_total - m_row[l]);
                    max_a = max_a.max(a);
                    a
                })
                .collect();
            let mut sum = 0.0f64;
            for (l, &a) in a_row.iter().enumerate() {
                let v = (a - max_a).exp();
                next[i * num_labels + l] = v;
                sum += v;
            }
            if !sum.is_finite() || sum <= 0.0 {
                return Err(Error::NonFiniteIteration { iteration: iteration as usize });
            }
            for l in 0..num_labels {
                next[i * num_labels + l] /= sum;
            }
        }
        q = next;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIteration { iteration: iteration as usize });
        }
        marginals = Marginals::from_q(w, h, num_labels, q.clone());
        observer(iteration, &marginals)?;
    }
    Ok(marginals)
}

/// Mean-field inference without an observer.
pub fn mean_field(
    unary: &ScoreMap,
    features: &[PixelFeature],
    boxes: &[DetectionBox],
    heatmap: &PerspectiveHeatmap,
    params: &CrfParams,
) -> Result<Marginals> {
    mean_field_observed(unary, features, boxes, heatmap, params, |_, _| Ok(()))
}

/// Exhaustive global MAP via depth-first branch and bound. Every energy term
/// is non-negative, so a partial labeling's cost lower-bounds all of its
/// completions and pruning is exact. Ties resolve to the lexicographically
/// smallest labeling in scan order.
pub fn exact_map(
    unary: &ScoreMap,
    features: &[PixelFeature],
    boxes: &[DetectionBox],
    heatmap: &PerspectiveHeatmap,
    params: &CrfParams,
) -> Result<(LabelMap, f64)> {
    params.validate()?;
    check_grids(unary, features, heatmap)?;
    let (w, h) = (unary.width(), unary.height());
    let n = (w as usize) * (h as usize);
    let num_labels = unary.num_labels();
    if (num_labels as f64).powi(n as i32) > 5e7 {
        return Err(Error::InstanceTooLarge {
            pixels: n,
            labels: num_labels,
        });
    }

    let psi: Vec<f64> = unary.scores().iter().map(|&v| v as f64).collect();
    let mu_eval = MuEvaluator::new(boxes, heatmap, params);
    // adj[i] lists (j, weight) with j < i so pixel i's incremental cost only
    // references already-assigned pixels.
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for_each_coupled_pair(w, h, boxes, &mu_eval, params.mu_fallback == 0.0, |i, j, mu_ij| {
        let weight = mu_ij * kappa(&features[i], &features[j], params);
        if weight > 0.0 {
            adj[j].push((i, weight));
        }
    });
    for row in &mut adj {
        row.sort_unstable_by_key(|&(j, _)| j);
    }

    // Seed the bound with the unary argmin labeling's true energy.
    let greedy: Vec<u16> = psi
        .chunks_exact(num_labels)
        .map(|px| {
            let mut best = 0usize;
            for (l, &v) in px.iter().enumerate().skip(1) {
                if v < px[best] {
                    best = l;
                }
            }
            best as u16
        })
        .collect();
    let greedy_map = LabelMap::new(w, h, greedy.clone())?;
    let mut best_energy = energy(&greedy_map, unary, features, boxes, heatmap, params)?;
    let mut best_labels = greedy;

    let mut current = vec![0u16; n];
    // Iterative DFS over (pixel, next label to try, prefix energy).
    let mut stack: Vec<(usize, usize, f64)> = vec![(0, 0, 0.0)];
    while let Some((pixel, label, prefix)) = stack.pop() {
        if label >= num_labels {
            continue;
        }
        stack.push((pixel, label + 1, prefix));
        let mut cost = prefix + psi[pixel * num_labels + label];
        for &(j, weight) in &adj[pixel] {
            if current[j] != label as u16 {
                cost += weight;
            }
        }
        if cost >= best_energy {
            continue;
        }
        current[pixel] = label as u16;
        if pixel + 1 == n {
            best_energy = cost;
            best_labels = current.clone();
        } else {
            stack.push((pixel + 1, 0, cost));
        }
    }
    Ok((LabelMap::new(w, h, best_labels)?, best_energy))
}

/// Full refinement: scores to unary potentials, mean-field marginals, then
/// per-pixel argmax (ties to the lowest label id).
pub fn refine(
    scores: &ScoreMap,
    image: &RgbImage,
    boxes: &[DetectionBox],
    heatmap: &PerspectiveHeatmap,
    params: &CrfParams,
) -> Result<LabelMap> {
    if image.width() != scores.width() || image.height() != scores.height() {
        return Err(Error::DimensionMismatch {
            what: "crf image".into(),
            want_w: scores.width(),
            want_h: scores.height(),
            got_w: image.width(),
            got_h: image.height(),
        });
    }
    let unary = unary_from_scores(scores);
    let features = features_from_image(image);
    let marginals = mean_field(&unary, &features, boxes, heatmap, params)?;
    Ok(marginals.argmax_labels())
}
