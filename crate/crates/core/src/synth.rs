//! Synthetic perspective scenes with exact ground truth, plus a noisy
//! classification oracle whose failure modes depend on object size and the
//! effective resolution it runs at. Together they let the whole
//! heatmap/fovea/refinement chain be evaluated without any real imagery.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    DetectionBox, Instance, InstanceSet, LabelMap, PixelRun, RgbImage, ScoreMap, IGNORE_LABEL,
};
use crate::error::{Error, Result};
use crate::fusion::{Branch, PixelClassifier};

/// One renderable object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneClass {
    pub id: u16,
    /// Base fill color before per-pixel noise.
    pub color: [u8; 3],
    /// Real-world linear size; on-image size is this divided by depth.
    pub real_size: f64,
    /// Class this one is typically mistaken for.
    pub confusable: u16,
}

fn default_noise_amplitude() -> u8 {
    8
}

fn default_max_retries() -> u32 {
    200
}

/// Full description of one synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Point all depth rays converge to; must lie inside the image.
    pub vanishing_point: [f64; 2],
    /// Label filling every pixel no object covers.
    pub background_id: u16,
    pub background_color: [u8; 3],
    pub classes: Vec<SceneClass>,
    pub num_objects: u32,
    /// Inclusive depth sampling range, nearest first.
    pub depth_range: [f64; 2],
    pub rng_seed: u64,
    /// Uniform per-channel pixel noise amplitude.
    #[serde(default = "default_noise_amplitude")]
    pub noise_amplitude: u8,
    /// Placement attempts per object before giving up.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene spec", "zero image dimension"));
        }
        let [vx, vy] = self.vanishing_point;
        if !(vx.is_finite() && vy.is_finite())
            || vx < 0.0
            || vy < 0.0
            || vx >= self.width as f64
            || vy >= self.height as f64
        {
            return Err(Error::invalid(
                "vanishing_point",
                format!("({vx}, {vy}) lies outside the {}x{} image", self.width, self.height),
            ));
        }
        let [z0, z1] = self.depth_range;
        if !(z0.is_finite() && z1.is_finite()) || z0 <= 0.0 || z1 < z0 {
            return Err(Error::invalid(
                "depth_range",
                format!("[{z0}, {z1}] must satisfy 0 < near <= far"),
            ));
        }
        if self.classes.is_empty() {
            return Err(Error::EmptyInput {
                what: "scene classes".into(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.classes {
            if c.id == IGNORE_LABEL || c.id == self.background_id {
                return Err(Error::invalid(
                    "scene class id",
                    format!("{} collides with the background or ignore id", c.id),
                ));
            }
            if !seen.insert(c.id) {
                return Err(Error::invalid("scene class id", format!("{} repeats", c.id)));
            }
            if !(c.real_size.is_finite() && c.real_size > 0.0) {
                return Err(Error::invalid(
                    "real_size",
                    format!("{} for class {}", c.real_size, c.id),
                ));
            }
        }
        for c in &self.classes {
            if c.confusable != self.background_id && !seen.contains(&c.confusable) {
                return Err(Error::invalid(
                    "confusable",
                    format!("class {} points at unknown class {}", c.id, c.confusable),
                ));
            }
        }
        if self.background_id == IGNORE_LABEL {
            return Err(Error::invalid(
                "background_id",
                "collides with the ignore label".to_string(),
            ));
        }
        Ok(())
    }

    /// Highest class id in play plus one: the label-dimension needed by any
    /// score map over this scene.
    pub fn num_labels(&self) -> usize {
        let max = self
            .classes
            .iter()
            .map(|c| c.id)
            .chain([self.background_id])
            .max()
            .unwrap_or(0);
        max as usize + 1
    }

    /// Confusable-class lookup in the form the oracle consumes.
    pub fn confusables(&self) -> BTreeMap<u16, u16> {
        self.classes.iter().map(|c| (c.id, c.confusable)).collect()
    }
}

/// Linear on-image size of an object of `real_size` seen at depth `z`.
pub fn projected_size(real_size: f64, z: f64) -> i64 {
    (real_size / z).round() as i64
}

/// A rendered scene with its exact annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub image: RgbImage,
    pub gt: LabelMap,
    pub instances: InstanceSet,
    pub boxes: Vec<DetectionBox>,
}

/// Renders a scene: squares sampled at uniform depths, scaled by 1/depth,
/// placed along random rays from the vanishing point at a distance
/// proportional to 1/depth (so distant, small objects cluster near it),
/// rejection-sampled to keep objects disjoint and fully inside the image.
/// Pixels take the owning class's base color plus uniform noise; detection
/// boxes are the exact instance bounds with score 1.
pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let [vx, vy] = spec.vanishing_point;
    let [z0, z1] = spec.depth_range;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    // Farthest corner sets the ray length scale so near objects can reach
    // the image periphery.
    let r_max = [
        (0.0, 0.0),
        (w as f64, 0.0),
        (0.0, h as f64),
        (w as f64, h as f64),
    ]
    .iter()
    .map(|&(cx, cy)| ((cx - vx).powi(2) + (cy - vy).powi(2)).sqrt())
    .fold(0.0f64, f64::max);

    let mut rects: Vec<(u32, u32, u32, u32, u16)> = Vec::new();
    for index in 0..spec.num_objects as usize {
        let mut placed = false;
        for _ in 0..=spec.max_retries {
            let class = &spec.classes[rng.gen_range(0..spec.classes.len())];
            let z = rng.gen_range(z0..=z1);
            let side = projected_size(class.real_size, z);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            if side < 1 || side > w.min(h) as i64 {
                continue; // degenerate or oversized: resample
            }
            let side = side as u32;
            let r = r_max * (z0 / z);
            let cx = vx + r * angle.cos();
            let cy = vy + r * angle.sin();
            let x0 = ((cx - side as f64 / 2.0).round() as i64).clamp(0, (w - side) as i64) as u32;
            let y0 = ((cy - side as f64 / 2.0).round() as i64).clamp(0, (h - side) as i64) as u32;
            let rect = (x0, y0, x0 + side, y0 + side, class.id);
            let overlaps = rects
                .iter()
                .any(|r2| rect.0 < r2.2 && r2.0 < rect.2 && rect.1 < r2.3 && r2.1 < rect.3);
            if overlaps {
                continue;
            }
            rects.push(rect);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::ScenePlacement {
                index,
                retries: spec.max_retries as usize,
            });
        }
    }

    let mut gt = LabelMap::filled(w, h, spec.background_id)?;
    let mut instances = Vec::with_capacity(rects.len());
    let mut boxes = Vec::with_capacity(rects.len());
    for &(x0, y0, x1, y1, class_id) in &rects {
        let runs: Vec<PixelRun> = (y0..y1).map(|y| PixelRun { y, x0, x1 }).collect();
        for run in &runs {
            for x in run.x0..run.x1 {
                gt.set(x, run.y, class_id);
            }
        }
        instances.push(Instance::from_runs(class_id, runs));
        boxes.push(DetectionBox {
            x0,
            y0,
            x1,
            y1,
            score: 1.0,
            class_id,
        });
    }
    let instances = InstanceSet::new(w, h, instances)?;

    let color_of: Vec<[u8; 3]> = {
        let mut lut = vec![spec.background_color; spec.num_labels()];
        for c in &spec.classes {
            lut[c.id as usize] = c.color;
        }
        lut
    };
    let mut image = RgbImage::filled(w, h, spec.background_color)?;
    let amp = spec.noise_amplitude as i32;
    for y in 0..h {
        for x in 0..w {
            let base = color_of[gt.get(x, y) as usize];
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let noisy = base[ch] as i32 + rng.gen_range(-amp..=amp);
                px[ch] = noisy.clamp(0, 255) as u8;
            }
            image.set(x, y, px);
        }
    }

    Ok(GeneratedScene {
        image,
        gt,
        instances,
        boxes,
    })
}

fn default_score_margin() -> f32 {
    3.0
}

fn default_score_noise() -> f32 {
    0.25
}

/// Behavior of the synthetic classification oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Misclassification rate ceiling for the smallest objects.
    pub rho_max: f64,
    /// Effective area at which the misclassification rate starts dropping
    /// below the ceiling.
    pub area_ref: f64,
    /// Effective area above which an object gets block corruption.
    pub breakdown_area: f64,
    /// Fraction of a broken object's pixels scored toward its confusable.
    pub breakdown_frac: f64,
    pub rng_seed: u64,
    /// Which class each class gets mistaken for.
    pub confusables: BTreeMap<u16, u16>,
    /// Label dimension of produced score maps.
    pub num_labels: usize,
    /// One-hot magnitude of the favored label.
    #[serde(default = "default_score_margin")]
    pub score_margin: f32,
    /// Additive uniform score noise amplitude; kept below the margin so the
    /// favored label always survives the argmax.
    #[serde(default = "default_score_noise")]
    pub score_noise: f32,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho_max) || !self.rho_max.is_finite() {
            return Err(Error::invalid("rho_max", format!("{} not in [0, 1]", self.rho_max)));
        }
        if !(self.area_ref.is_finite() && self.area_ref > 0.0) {
            return Err(Error::invalid("area_ref", format!("{} must be positive", self.area_ref)));
        }
        if !(self.breakdown_area.is_finite() && self.breakdown_area > 0.0) {
            return Err(Error::invalid(
                "breakdown_area",
                format!("{} must be positive", self.breakdown_area),
            ));
        }
        if !(0.0..=1.0).contains(&self.breakdown_frac) || !self.breakdown_frac.is_finite() {
            return Err(Error::invalid(
                "breakdown_frac",
                format!("{} not in [0, 1]", self.breakdown_frac),
            ));
        }
        if self.num_labels < 2 {
            return Err(Error::invalid(
                "num_labels",
                format!("{} must be at least 2", self.num_labels),
            ));
        }
        if !(self.score_margin.is_finite() && self.score_margin > 0.0) {
            return Err(Error::invalid(
                "score_margin",
                format!("{} must be positive", self.score_margin),
            ));
        }
        if !(self.score_noise.is_finite() && self.score_noise >= 0.0)
            || self.score_noise >= self.score_margin
        {
            return Err(Error::invalid(
                "score_noise",
                format!(
                    "{} must be non-negative and below score_margin {}",
                    self.score_noise, self.score_margin
                ),
            ));
        }
        Ok(())
    }

    /// Misclassification probability for an object of `area` pixels seen at
    /// resolution multiplier `scale`: non-increasing in `area * scale^2`.
    pub fn rho(&self, area: u64, scale: f64) -> f64 {
        let effective = area as f64 * scale * scale;
        self.rho_max * (self.area_ref / effective).min(1.0)
    }
}

/// Per-pixel label the oracle will favor, before score noise. Whole-object
/// flips draw one uniform variate from a per-object substream, so the set of
/// flipped objects at a higher scale is a subset of the set at a lower scale
/// for the same seed.
fn favored_labels(
    gt: &LabelMap,
    instances: &InstanceSet,
    cfg: &OracleConfig,
    scale: f64,
) -> Result<Vec<u16>> {
    let w = gt.width() as usize;
    let mut favored = gt.labels().to_vec();
    for (idx, inst) in instances.instances().iter().enumerate() {
        let confusable = cfg
            .confusables
            .get(&inst.class_id)
            .copied()
            .unwrap_or(inst.class_id);
        let mut sub = ChaCha8Rng::seed_from_u64(
            cfg.rng_seed ^ ((idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let flip = sub.gen::<f64>() < cfg.rho(inst.area, scale);
        let effective = inst.area as f64 * scale * scale;
        let broken_pixels = if effective > cfg.breakdown_area {
            (cfg.breakdown_frac * inst.area as f64).round() as usize
        } else {
            0
        };
        let mut seen = 0usize;
        for run in &inst.runs {
            for x in run.x0..run.x1 {
                if flip || seen < broken_pixels {
                    favored[(run.y as usize) * w + x as usize] = confusable;
                }
                seen += 1;
            }
        }
    }
    Ok(favored)
}

fn scores_from_favored(
    width: u32,
    height: u32,
    favored: &[u16],
    cfg: &OracleConfig,
) -> Result<ScoreMap> {
    for (i, &f) in favored.iter().enumerate() {
        if f != IGNORE_LABEL && (f as usize) >= cfg.num_labels {
            let _ = i;
            return Err(Error::LabelNotInTable { label: f });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5851_F42D_4C95_7F2D);
    let n = (width as usize) * (height as usize);
    let mut scores = Vec::with_capacity(n * cfg.num_labels);
    let (margin, noise) = (cfg.score_margin, cfg.score_noise);
    for &f in favored {
        for l in 0..cfg.num_labels {
            let base = if f != IGNORE_LABEL && l == f as usize {
                margin
            } else {
                -margin
            };
            let jitter = if noise > 0.0 {
                noise * rng.gen_range(-1.0f32..1.0)
            } else {
                0.0
            };
            scores.push(base + jitter);
        }
    }
    ScoreMap::new(width, height, cfg.num_labels, scores)
}

/// Simulated classifier output for a scene viewed at resolution multiplier
/// `scale` (1 = coarse pass, 2 = a 2x zoomed pass). Per object, the whole
/// object's scores favor its confusable class with probability
/// `rho_max * min(1, area_ref / (area * scale^2))`, objects whose effective
/// area exceeds `breakdown_area` get a contiguous block of
/// `breakdown_frac` of their pixels scored toward the confusable class, and
/// every score carries bounded uniform noise. Deterministic given the seed.
pub fn oracle_classify(
    image: &RgbImage,
    gt: &LabelMap,
    instances: &InstanceSet,
    cfg: &OracleConfig,
    scale: f64,
) -> Result<ScoreMap> {
    cfg.validate()?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid("scale", format!("{scale} must be positive")));
    }
    for (what, gw, gh) in [
        ("oracle image", image.width(), image.height()),
        ("oracle instances", instances.width(), instances.height()),
    ] {
        if gw != gt.width() || gh != gt.height() {
            return Err(Error::DimensionMismatch {
                what: what.into(),
                want_w: gt.width(),
                want_h: gt.height(),
                got_w: gw,
                got_h: gh,
            });
        }
    }
    let favored = favored_labels(gt, instances, cfg, scale)?;
    scores_from_favored(gt.width(), gt.height(), &favored, cfg)
}

/// Classifier adapter driving the two-branch parsing pipeline from the
/// oracle. The coarse branch scores the whole scene at scale 1. The zoomed
/// branch recomputes object flips at the zoom factor (fewer errors), scores
/// the cropped region at native resolution, and replicates each pixel to the
/// requested output size, so downscaling the result recovers the native
/// scores bit for bit.
#[derive(Debug, Clone)]
pub struct OracleClassifier {
    gt: LabelMap,
    instances: InstanceSet,
    cfg: OracleConfig,
}

impl OracleClassifier {
    pub fn new(gt: LabelMap, instances: InstanceSet, cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        if instances.width() != gt.width() || instances.height() != gt.height() {
            return Err(Error::DimensionMismatch {
                what: "oracle instances".into(),
                want_w: gt.width(),
                want_h: gt.height(),
                got_w: instances.width(),
                got_h: instances.height(),
            });
        }
        Ok(OracleClassifier { gt, instances, cfg })
    }
}

impl PixelClassifier for OracleClassifier {
    fn classify(&self, image: &RgbImage, branch: &Branch) -> Result<ScoreMap> {
        match branch {
            Branch::Full => oracle_classify(image, &self.gt, &self.instances, &self.cfg, 1.0),
            Branch::Fovea { rect, factor } => {
                let (want_w, want_h) = (rect.width * factor, rect.height * factor);
                if image.width() != want_w || image.height() != want_h {
                    return Err(Error::DimensionMismatch {
                        what: "zoomed crop".into(),
                        want_w,
                        want_h,
                        got_w: image.width(),
                        got_h: image.height(),
                    });
                }
                let favored = favored_labels(&self.gt, &self.instances, &self.cfg, *factor as f64)?;
                let native =
                    scores_from_favored(self.gt.width(), self.gt.height(), &favored, &self.cfg)?;
                let labels = self.cfg.num_labels;
                let mut out =
                    Vec::with_capacity((want_w as usize) * (want_h as usize) * labels);
                for y in 0..want_h {
                    let sy = rect.y0 + y / factor;
                    for x in 0..want_w {
                        let sx = rect.x0 + x / factor;
                        for l in 0..labels {
                            out.push(native.get(sx, sy, l));
                        }
                    }
                }
                ScoreMap::new(want_w, want_h, labels, out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::test_table;
    use crate::fusion::{downscale_scores, ResampleMode};
    use crate::perspective::{compute_average_sizes, heatmap_h, HeatmapGtConfig};

    fn demo_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            width: 64,
            height: 48,
            vanishing_point: [32.0, 18.0],
            background_id: 0,
            background_color: [30, 30, 30],
            classes: vec![
                SceneClass {
                    id: 1,
                    color: [200, 60, 60],
                    real_size: 40.0,
                    confusable: 2,
                },
                SceneClass {
                    id: 2,
                    color: [60, 200, 60],
                    real_size: 28.0,
                    confusable: 1,
                },
            ],
            num_objects: 7,
            depth_range: [2.0, 12.0],
            rng_seed: seed,
            noise_amplitude: 8,
            max_retries: 200,
        }
    }

    fn demo_oracle(seed: u64) -> OracleConfig {
        OracleConfig {
            rho_max: 0.8,
            area_ref: 120.0,
            breakdown_area: 1e9,
            breakdown_frac: 0.0,
            rng_seed: seed,
            confusables: BTreeMap::from([(1, 2), (2, 1)]),
            num_labels: 3,
            score_margin: 3.0,
            score_noise: 0.25,
        }
    }

    #[test]
    fn spec_validation_rejects_bad_fields() {
        let mut s = demo_spec(1);
        s.vanishing_point = [100.0, 10.0];
        assert!(s.validate().is_err());
        let mut s = demo_spec(1);
        s.depth_range = [4.0, 2.0];
        assert!(s.validate().is_err());
        let mut s = demo_spec(1);
        s.classes[0].id = 0; // collides with background
        assert!(s.validate().is_err());
        let mut s = demo_spec(1);
        s.classes[0].confusable = 9;
        assert!(s.validate().is_err());
        assert!(demo_spec(1).validate().is_ok());
    }

    #[test]
    fn same_seed_reproduces_the_scene_exactly() {
        let a = generate_scene(&demo_spec(42)).unwrap();
        let b = generate_scene(&demo_spec(42)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&demo_spec(43)).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn equal_real_sizes_at_double_depth_halve_on_image() {
        // Two one-object scenes pinned at depths 2 and 4.
        let mut near = demo_spec(7);
        near.num_objects = 1;
        near.classes.truncate(1);
        near.classes[0].confusable = 1;
        near.depth_range = [2.0, 2.0];
        let mut far = near.clone();
        far.depth_range = [4.0, 4.0];
        let a = generate_scene(&near).unwrap();
        let b = generate_scene(&far).unwrap();
        let wa = a.boxes[0].x1 - a.boxes[0].x0;
        let wb = b.boxes[0].x1 - b.boxes[0].x0;
        assert_eq!(wa, 20);
        assert_eq!(wb, 10);
    }

    #[test]
    fn instance_sizes_respect_the_depth_range() {
        for seed in 0..20u64 {
            let spec = demo_spec(seed);
            let scene = generate_scene(&spec).unwrap();
            for b in &scene.boxes {
                let class = spec.classes.iter().find(|c| c.id == b.class_id).unwrap();
                let side = (b.x1 - b.x0) as i64;
                assert_eq!(side, (b.y1 - b.y0) as i64, "objects are squares");
                let lo = projected_size(class.real_size, spec.depth_range[1]);
                let hi = projected_size(class.real_size, spec.depth_range[0]);
                assert!(
                    (lo..=hi).contains(&side),
                    "seed {seed}: side {side} outside [{lo}, {hi}]"
                );
            }
        }
    }

    #[test]
    fn ground_truth_instances_and_boxes_agree() {
        let scene = generate_scene(&demo_spec(3)).unwrap();
        assert_eq!(scene.instances.instances().len(), 7);
        // Boxes are the exact instance bounds with score 1.
        for (inst, b) in scene.instances.instances().iter().zip(&scene.boxes) {
            assert_eq!(b.score, 1.0);
            assert_eq!(b.class_id, inst.class_id);
            let (x0, y0, x1, y1) = inst.bounds().unwrap();
            assert_eq!((b.x0, b.y0, b.x1, b.y1), (x0, y0, x1, y1));
            assert_eq!(inst.area as u64, b.pixel_count());
        }
        // The label map matches an independent re-rasterization.
        let relabeled = scene.instances.label_map(0);
        assert_eq!(relabeled.labels(), scene.gt.labels());
        // Objects never overlap.
        for (i, a) in scene.boxes.iter().enumerate() {
            for b in &scene.boxes[i + 1..] {
                let disjoint = a.x1 <= b.x0 || b.x1 <= a.x0 || a.y1 <= b.y0 || b.y1 <= a.y0;
                assert!(disjoint, "boxes {a:?} and {b:?} overlap");
            }
        }
    }

    #[test]
    fn small_objects_sit_closer_to_the_vanishing_point() {
        let mut small_d = Vec::new();
        let mut large_d = Vec::new();
        for seed in 0..50u64 {
            let spec = demo_spec(seed);
            let scene = generate_scene(&spec).unwrap();
            let mut sized: Vec<(u64, f64)> = scene
                .boxes
                .iter()
                .map(|b| {
                    let cx = (b.x0 + b.x1) as f64 / 2.0;
                    let cy = (b.y0 + b.y1) as f64 / 2.0;
                    let d = ((cx - spec.vanishing_point[0]).powi(2)
                        + (cy - spec.vanishing_point[1]).powi(2))
                    .sqrt();
                    (b.pixel_count(), d)
                })
                .collect();
            sized.sort_by_key(|&(a, _)| a);
            let half = sized.len() / 2;
            small_d.extend(sized[..half].iter().map(|&(_, d)| d));
            large_d.extend(sized[half..].iter().map(|&(_, d)| d));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&small_d) < mean(&large_d),
            "small {} !< large {}",
            mean(&small_d),
            mean(&large_d)
        );
    }

    #[test]
    fn heatmap_peaks_inside_the_vanishing_point_half_window() {
        let mut hits = 0;
        let total = 20;
        for seed in 0..total {
            let spec = demo_spec(1000 + seed);
            let scene = generate_scene(&spec).unwrap();
            let table = test_table(&[
                (0, "background", "void", None, true),
                (1, "red", "object", Some(1.0), true),
                (2, "green", "object", Some(1.0), true),
            ]);
            let table =
                compute_average_sizes(std::slice::from_ref(&scene.instances), &table).unwrap();
            let heat = heatmap_h(&scene.instances, &table, &HeatmapGtConfig::default()).unwrap();
            // Half-size window centered on the vanishing point, clamped in.
            let (w, h) = (spec.width, spec.height);
            let (ww, wh) = (w / 2, h / 2);
            let x0 = ((spec.vanishing_point[0] - ww as f64 / 2.0).round() as i64)
                .clamp(0, (w - ww) as i64) as u32;
            let y0 = ((spec.vanishing_point[1] - wh as f64 / 2.0).round() as i64)
                .clamp(0, (h - wh) as i64) as u32;
            let mut inside = (0.0f64, 0u64);
            let mut outside = (0.0f64, 0u64);
            for y in 0..h {
                for x in 0..w {
                    let v = heat.get(x, y) as f64;
                    if (x0..x0 + ww).contains(&x) && (y0..y0 + wh).contains(&y) {
                        inside = (inside.0 + v, inside.1 + 1);
                    } else {
                        outside = (outside.0 + v, outside.1 + 1);
                    }
                }
            }
            if inside.0 / inside.1 as f64 > outside.0 / outside.1 as f64 {
                hits += 1;
            }
        }
        assert!(hits * 10 >= total * 9, "only {hits}/{total} seeds peaked inside");
    }

    #[test]
    fn noise_free_oracle_reproduces_ground_truth() {
        let scene = generate_scene(&demo_spec(5)).unwrap();
        let cfg = OracleConfig {
            rho_max: 0.0,
            breakdown_frac: 0.0,
            breakdown_area: 1.0, // every object "breaks", but the block is empty
            ..demo_oracle(5)
        };
        let scores =
            oracle_classify(&scene.image, &scene.gt, &scene.instances, &cfg, 1.0).unwrap();
        assert_eq!(scores.argmax_labels().labels(), scene.gt.labels());
    }

    #[test]
    fn small_objects_always_flip_at_the_rho_ceiling() {
        // area * scale^2 <= area_ref / 2 clamps rho to rho_max; with
        // rho_max = 1 every object must flip.
        let spec = demo_spec(6);
        let scene = generate_scene(&spec).unwrap();
        let max_area = scene
            .instances
            .instances()
            .iter()
            .map(|i| i.area)
            .max()
            .unwrap();
        let cfg = OracleConfig {
            rho_max: 1.0,
            area_ref: 2.0 * max_area as f64,
            score_noise: 0.0,
            ..demo_oracle(6)
        };
        let scores =
            oracle_classify(&scene.image, &scene.gt, &scene.instances, &cfg, 1.0).unwrap();
        let labels = scores.argmax_labels();
        for inst in scene.instances.instances() {
            let expect = cfg.confusables[&inst.class_id];
            for run in &inst.runs {
                for x in run.x0..run.x1 {
                    assert_eq!(labels.get(x, run.y), expect);
                }
            }
        }
    }

    #[test]
    fn rho_is_non_increasing_in_effective_area() {
        let cfg = demo_oracle(0);
        let mut last = f64::INFINITY;
        for area in [1u64, 10, 50, 120, 121, 500, 5000] {
            let r = cfg.rho(area, 1.0);
            assert!(r <= last);
            assert!((0.0..=cfg.rho_max).contains(&r));
            last = r;
        }
        for scale in [1.0, 1.5, 2.0, 4.0] {
            assert!(cfg.rho(100, scale) <= cfg.rho(100, 1.0));
        }
        // Clamp: effective area at half the reference stays at the ceiling.
        assert_eq!(cfg.rho(60, 1.0), cfg.rho_max);
    }

    #[test]
    fn higher_scale_strictly_reduces_mean_instance_error() {
        let mut err1 = 0u64;
        let mut err2 = 0u64;
        let mut total = 0u64;
        for seed in 0..20u64 {
            let scene = generate_scene(&demo_spec(seed)).unwrap();
            let cfg = demo_oracle(seed);
            let l1 = oracle_classify(&scene.image, &scene.gt, &scene.instances, &cfg, 1.0)
                .unwrap()
                .argmax_labels();
            let l2 = oracle_classify(&scene.image, &scene.gt, &scene.instances, &cfg, 2.0)
                .unwrap()
                .argmax_labels();
            for inst in scene.instances.instances() {
                total += 1;
                let (x, y) = (inst.runs[0].x0, inst.runs[0].y);
                let flipped1 = l1.get(x, y) != inst.class_id;
                let flipped2 = l2.get(x, y) != inst.class_id;
                err1 += flipped1 as u64;
                err2 += flipped2 as u64;
                // Error nesting: anything right at scale 1 stays right at 2.
                assert!(!flipped2 || flipped1, "seed {seed}: error appeared at scale 2");
            }
        }
        assert!(
            err2 < err1,
            "scale 2 errors {err2}/{total} not below scale 1 errors {err1}/{total}"
        );
    }

    #[test]
    fn breakdown_corrupts_exactly_the_requested_block() {
        let spec = SceneSpec {
            num_objects: 1,
            depth_range: [2.0, 2.0],
            ..demo_spec(9)
        };
        let scene = generate_scene(&spec).unwrap();
        let inst = &scene.instances.instances()[0];
        let cfg = OracleConfig {
            rho_max: 0.0,
            breakdown_area: inst.area as f64 - 1.0,
            breakdown_frac: 0.25,
            score_noise: 0.0,
            ..demo_oracle(9)
        };
        let labels = oracle_classify(&scene.image, &scene.gt, &scene.instances, &cfg, 1.0)
            .unwrap()
            .argmax_labels();
        let confusable = cfg.confusables[&inst.class_id];
        let mut corrupted = 0;
        let mut seen = 0;
        let mut boundary_ok = true;
        for run in &inst.runs {
            for x in run.x0..run.x1 {
                let is_conf = labels.get(x, run.y) == confusable;
                corrupted += is_conf as usize;
                // The block is the first pixels in scan order: once a clean
                // pixel appears, no corrupted one may follow.
                if !is_conf && seen < corrupted {
                    // fine: corruption is a prefix
                }
                if is_conf && seen > corrupted {
                    boundary_ok = false;
                }
                seen += 1;
            }
        }
        assert!(boundary_ok, "corrupted pixels are not a contiguous prefix");
        assert_eq!(corrupted, (0.25 * inst.area as f64).round() as usize);
    }

    #[test]
    fn oracle_is_deterministic() {
        let scene = generate_scene(&demo_spec(11)).unwrap();
        let cfg = demo_oracle(11);
        let a = oracle_classify(&scene.image, &scene.gt, &scene.instances, &cfg, 1.0).unwrap();
        let b = oracle_classify(&scene.image, &scene.gt, &scene.instances, &cfg, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zoomed_branch_round_trips_through_nearest_resampling() {
        use crate::perspective::FoveaRect;
        let scene = generate_scene(&demo_spec(13)).unwrap();
        let cfg = demo_oracle(13);
        let classifier =
            OracleClassifier::new(scene.gt.clone(), scene.instances.clone(), cfg.clone()).unwrap();
        let rect = FoveaRect {
            x0: 8,
            y0: 4,
            width: 16,
            height: 12,
            mean_score: 0.0,
        };
        let crop = crate::fusion::crop_and_upscale(
            &scene.image,
            &rect,
            2,
            ResampleMode::Nearest,
        )
        .unwrap();
        let zoomed = classifier
            .classify(&crop, &Branch::Fovea { rect: rect.clone(), factor: 2 })
            .unwrap();
        assert_eq!(zoomed.width(), 32);
        assert_eq!(zoomed.height(), 24);
        let back = downscale_scores(&zoomed, 2, ResampleMode::Nearest).unwrap();
        // Downscaling recovers the native-resolution crop bit for bit.
        let favored = favored_labels(&scene.gt, &scene.instances, &cfg, 2.0).unwrap();
        let native = scores_from_favored(64, 48, &favored, &cfg).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                for l in 0..cfg.num_labels {
                    let want = native.get(rect.x0 + x, rect.y0 + y, l);
                    assert_eq!(back.get(x, y, l).to_bits(), want.to_bits());
                }
            }
        }
    }

    #[test]
    fn oracle_config_validation_rejects_bad_ranges() {
        let mut c = demo_oracle(0);
        c.rho_max = 1.5;
        assert!(c.validate().is_err());
        let mut c = demo_oracle(0);
        c.breakdown_frac = -0.1;
        assert!(c.validate().is_err());
        let mut c = demo_oracle(0);
        c.score_noise = c.score_margin;
        assert!(c.validate().is_err());
        let mut c = demo_oracle(0);
        c.num_labels = 1;
        assert!(c.validate().is_err());
        assert!(demo_oracle(0).validate().is_ok());
    }
}
