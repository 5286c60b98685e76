//! Two-branch parse orchestration: a coarse full-image pass, a zoomed pass
//! over the fovea region, and score-space fusion of the two.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataio::{PerspectiveHeatmap, RgbImage, ScoreMap};
use crate::error::{Error, Result};
use crate::perspective::{locate_fovea, FoveaRect};
use crate::resample::{bilinear_plane, nearest_src};

/// Which pass a classifier call serves. The fovea branch sees a crop scaled
/// up by `factor`; classifiers that key off geometry (the synthetic oracle)
/// need that context, image-driven ones may ignore it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    Full,
    Fovea { rect: FoveaRect, factor: u32 },
}

/// Pluggable per-pixel scorer. Output spatial size must match the input
/// image; the label count must be identical across calls.
pub trait PixelClassifier {
    fn classify(&self, image: &RgbImage, branch: &Branch) -> Result<ScoreMap>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Replace,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub upscale_factor: u32,
    /// Resampling used to bring fovea scores back to rect resolution.
    pub resample: ResampleMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::Replace,
            upscale_factor: 2,
            resample: ResampleMode::Nearest,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upscale_factor == 0 {
            return Err(Error::InvalidParam {
                what: "upscale_factor".into(),
                detail: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Full two-branch parse settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParseConfig {
    pub win_frac_w: f64,
    pub win_frac_h: f64,
    pub stride: u32,
    /// Resampling used on the image crop fed to the fovea branch. Scores use
    /// `fusion.resample`; images default to bilinear for plausibility.
    pub image_resample: ResampleMode,
    pub fusion: FusionConfig,
}

impl Default for ParseConfig {
    fn default() -> Self {
        ParseConfig {
            win_frac_w: 0.5,
            win_frac_h: 0.5,
            stride: 1,
            image_resample: ResampleMode::Bilinear,
            fusion: FusionConfig::default(),
        }
    }
}

fn check_rect_bounds(rect: &FoveaRect, width: u32, height: u32) -> Result<()> {
    if rect.width == 0 || rect.height == 0 || rect.x1() > width || rect.y1() > height {
        return Err(Error::invalid(
            "fovea rect",
            format!(
                "rect ({},{}) {}x{} outside {}x{} image",
                rect.x0, rect.y0, rect.width, rect.height, width, height
            ),
        ));
    }
    Ok(())
}

/// Extracts the fovea crop and scales it up by an integer factor. Nearest
/// mode replicates source pixels; bilinear samples at target pixel centers.
pub fn crop_and_upscale(
    image: &RgbImage,
    rect: &FoveaRect,
    factor: u32,
    resample: ResampleMode,
) -> Result<RgbImage> {
    check_rect_bounds(rect, image.width(), image.height())?;
    if factor == 0 {
        return Err(Error::InvalidParam {
            what: "upscale factor".into(),
            detail: "must be >= 1".into(),
        });
    }
    let (ow, oh) = (rect.width * factor, rect.height * factor);
    let mut out = RgbImage::filled(ow, oh, [0, 0, 0])?;
    match resample {
        ResampleMode::Nearest => {
            for y in 0..oh {
                let sy = rect.y0 + nearest_src(y, factor);
                for x in 0..ow {
                    let sx = rect.x0 + nearest_src(x, factor);
                    out.set(x, y, image.get(sx, sy));
                }
            }
        }
        ResampleMode::Bilinear => {
            // Per-channel f32 planes over the crop, then center sampling.
            let (cw, ch) = (rect.width as usize, rect.height as usize);
            for c in 0..3 {
                let mut plane = Vec::with_capacity(cw * ch);
                for y in rect.y0..rect.y1() {
                    for x in rect.x0..rect.x1() {
                        plane.push(image.get(x, y)[c] as f32);
                    }
                }
                let scaled = bilinear_plane(&plane, cw, ch, ow as usize, oh as usize);
                for y in 0..oh {
                    for x in 0..ow {
                        let v = scaled[(y as usize) * (ow as usize) + x as usize];
                        let mut px = out.get(x, y);
                        px[c] = v.round().clamp(0.0, 255.0) as u8;
                        out.set(x, y, px);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Scales a score map down by an integer factor. Nearest mode takes the
/// top-left sample of each factor x factor block and requires divisible
/// dimensions; bilinear interpolates at target pixel centers.
pub fn downscale_scores(scores: &ScoreMap, factor: u32, resample: ResampleMode) -> Result<ScoreMap> {
    if factor == 0 {
        return Err(Error::InvalidParam {
            what: "downscale factor".into(),
            detail: "must be >= 1".into(),
        });
    }
    if factor == 1 {
        return Ok(scores.clone());
    }
    let (w, h, labels) = (scores.width(), scores.height(), scores.num_labels());
    if w % factor != 0 || h % factor != 0 {
        return Err(Error::InvalidParam {
            what: "downscale dimensions".into(),
            detail: format!("{w}x{h} not divisible by factor {factor}"),
        });
    }
    let (ow, oh) = (w / factor, h / factor);
    let mut out = ScoreMap::zeros(ow, oh, labels)?;
    match resample {
        ResampleMode::Nearest => {
            for y in 0..oh {
                for x in 0..ow {
                    for l in 0..labels {
                        out.set(x, y, l, scores.get(x * factor, y * factor, l));
                    }
                }
            }
        }
        ResampleMode::Bilinear => {
            let (wu, hu) = (w as usize, h as usize);
            for l in 0..labels {
                let plane: Vec<f32> = (0..wu * hu)
                    .map(|i| scores.scores()[i * labels + l])
                    .collect();
                let scaled = bilinear_plane(&plane, wu, hu, ow as usize, oh as usize);
                for y in 0..oh {
                    for x in 0..ow {
                        out.set(x, y, l, scaled[(y as usize) * (ow as usize) + x as usize]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Merges fovea-branch scores back into the coarse map. The fovea map is
/// first brought down to rect resolution, then written inside the rect
/// (replace) or averaged with the coarse scores there (average). Pixels
/// outside the rect keep their coarse scores bit-exactly.
pub fn fuse(
    coarse: &ScoreMap,
    fovea_scores: &ScoreMap,
    rect: &FoveaRect,
    cfg: &FusionConfig,
) -> Result<ScoreMap> {
    cfg.validate()?;
    check_rect_bounds(rect, coarse.width(), coarse.height())?;
    let f = cfg.upscale_factor;
    if fovea_scores.width() != rect.width * f || fovea_scores.height() != rect.height * f {
        return Err(Error::DimensionMismatch {
            what: "fovea scores".into(),
            want_w: rect.width * f,
            want_h: rect.height * f,
            got_w: fovea_scores.width(),
            got_h: fovea_scores.height(),
        });
    }
    if fovea_scores.num_labels() != coarse.num_labels() {
        return Err(Error::Classifier {
            detail: format!(
                "label count changed between branches: {} vs {}",
                coarse.num_labels(),
                fovea_scores.num_labels()
            ),
        });
    }
    let down = downscale_scores(fovea_scores, f, cfg.resample)?;
    let mut out = coarse.clone();
    for y in 0..rect.height {
        for x in 0..rect.width {
            for l in 0..coarse.num_labels() {
                let fv = down.get(x, y, l);
                let (ox, oy) = (rect.x0 + x, rect.y0 + y);
                let value = match cfg.mode {
                    FusionMode::Replace => fv,
                    FusionMode::Average => 0.5 * (out.get(ox, oy, l) + fv),
                };
                out.set(ox, oy, l, value);
            }
        }
    }
    Ok(out)
}

/// Runs the full two-branch parse: localize the fovea on the heatmap, score
/// the full image and the upscaled crop (exactly one classifier call each),
/// and fuse. Classifier calls are sequential, so serial classifiers are safe.
pub fn run_two_branch(
    image: &RgbImage,
    classifier: &dyn PixelClassifier,
    heatmap: &PerspectiveHeatmap,
    cfg: &ParseConfig,
) -> Result<(ScoreMap, FoveaRect)> {
    cfg.fusion.validate()?;
    if heatmap.width() != image.width() || heatmap.height() != image.height() {
        return Err(Error::DimensionMismatch {
            what: "parse heatmap".into(),
            want_w: image.width(),
            want_h: image.height(),
            got_w: heatmap.width(),
            got_h: heatmap.height(),
        });
    }
    let rect = locate_fovea(heatmap, cfg.win_frac_w, cfg.win_frac_h, cfg.stride)?;

    let coarse = classifier.classify(image, &Branch::Full)?;
    if coarse.width() != image.width() || coarse.height() != image.height() {
        return Err(Error::Classifier {
            detail: format!(
                "coarse scores are {}x{}, image is {}x{}",
                coarse.width(),
                coarse.height(),
                image.width(),
                image.height()
            ),
        });
    }

    let factor = cfg.fusion.upscale_factor;
    let crop = crop_and_upscale(image, &rect, factor, cfg.image_resample)?;
    let branch = Branch::Fovea { rect, factor };
    let fovea_scores = classifier.classify(&crop, &branch)?;
    if fovea_scores.width() != crop.width() || fovea_scores.height() != crop.height() {
        return Err(Error::Classifier {
            detail: format!(
                "fovea scores are {}x{}, crop is {}x{}",
                fovea_scores.width(),
                fovea_scores.height(),
                crop.width(),
                crop.height()
            ),
        });
    }

    let fused = fuse(&coarse, &fovea_scores, &rect, &cfg.fusion)?;
    Ok((fused, rect))
}

/// Serves pre-computed score maps in call order; the coarse branch must be
/// requested before the fovea branch.
pub struct FileBackedClassifier {
    maps: Mutex<std::collections::VecDeque<ScoreMap>>,
}

impl FileBackedClassifier {
    pub fn new(maps: Vec<ScoreMap>) -> Self {
        FileBackedClassifier {
            maps: Mutex::new(maps.into()),
        }
    }
}

impl PixelClassifier for FileBackedClassifier {
    fn classify(&self, _image: &RgbImage, _branch: &Branch) -> Result<ScoreMap> {
        self.maps
            .lock()
            .expect("classifier mutex poisoned")
            .pop_front()
            .ok_or_else(|| Error::Classifier {
                detail: "ran out of precomputed score maps".into(),
            })
    }
}
