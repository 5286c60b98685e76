//! Implementations of the single-stage subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ensure_dir, ensure_parent, fmt_metric, load_config, read_boxes_file, read_heatmap_file,
    read_json, read_label_map_file, read_ppm_file, read_scores_file, usage, write_json,
    write_text, CmdResult, GlobalArgs,
};
use crate::crf::{
    energy, features_from_image, grid_search, mean_field_observed, refine, unary_from_scores,
    CrfParams, ValCase,
};
use crate::dataio::{
    ingest_polygon_annotations, read_class_table, write_boxes, write_class_table, write_heatmap,
    write_label_map, write_ppm, write_scores, ClassDef, ClassTable, DetectionBox, InstanceSet,
    LabelMap, PerspectiveHeatmap, RgbImage, ScoreMap,
};
use crate::error::Result;
use crate::fusion::{run_two_branch, Branch, FileBackedClassifier, FusionMode, ParseConfig,
    PixelClassifier, ResampleMode};
use crate::metrics::{
    accumulate, iiou, iou, make_region_mask, ConfusionAccumulator, MetricLevel, MetricTable,
    RegionKind,
};
use crate::perspective::{
    compute_average_sizes, global_prior, heatmap_h, heatmap_v, locate_fovea, HeatmapGtConfig,
};
use crate::synth::{generate_scene, GeneratedScene, OracleClassifier, OracleConfig, SceneSpec};

// ---------------------------------------------------------------------------
// Flag-value enums. These mirror library enums so bad values are rejected by
// the argument parser (exit 1) rather than surfacing as data errors.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, clap::ValueEnum)]
pub(crate) enum RegionArg {
    Full,
    Central,
    Peripheral,
}

impl From<RegionArg> for RegionKind {
    fn from(r: RegionArg) -> Self {
        match r {
            RegionArg::Full => RegionKind::Full,
            RegionArg::Central => RegionKind::Central,
            RegionArg::Peripheral => RegionKind::Peripheral,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub(crate) enum FusionModeArg {
    Replace,
    Average,
}

impl From<FusionModeArg> for FusionMode {
    fn from(m: FusionModeArg) -> Self {
        match m {
            FusionModeArg::Replace => FusionMode::Replace,
            FusionModeArg::Average => FusionMode::Average,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub(crate) enum ResampleArg {
    Nearest,
    Bilinear,
}

impl From<ResampleArg> for ResampleMode {
    fn from(m: ResampleArg) -> Self {
        match m {
            ResampleArg::Nearest => ResampleMode::Nearest,
            ResampleArg::Bilinear => ResampleMode::Bilinear,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub(crate) enum ClassifierKindArg {
    /// Precomputed score tensors supplied via --coarse-scores/--fovea-scores.
    File,
    /// Synthetic oracle driven by ground truth and an oracle config.
    Oracle,
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(clap::Args)]
pub(crate) struct SynthArgs {
    /// Scene description JSON.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Number of scenes to generate (default 1).
    #[arg(long, value_name = "N")]
    scenes: Option<u32>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct SynthConfig {
    spec: Option<SceneSpec>,
    scenes: Option<u32>,
}

/// Manifest written at the root of a generated dataset; paths are relative
/// to the manifest's directory.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct DatasetManifest {
    pub width: u32,
    pub height: u32,
    pub classes: String,
    pub scenes: Vec<ManifestScene>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ManifestScene {
    pub name: String,
    pub image: String,
    pub gt: String,
    pub annotations: String,
    pub boxes: String,
}

#[derive(Serialize)]
struct AnnotationFileOut {
    width: u32,
    height: u32,
    objects: Vec<AnnotationObjectOut>,
}

#[derive(Serialize)]
struct AnnotationObjectOut {
    label: String,
    polygon: Vec<[f64; 2]>,
}

pub(crate) fn scene_name(index: usize) -> String {
    format!("scene_{index:03}")
}

/// Class metadata for a scene spec: one `class<id>` entry per id, background
/// in its own category, average sizes left unset until measured.
pub(crate) fn class_table_for_spec(spec: &SceneSpec) -> Result<ClassTable> {
    let mut defs = vec![ClassDef {
        id: spec.background_id,
        name: format!("class{}", spec.background_id),
        category: "background".into(),
        avg_size: None,
        evaluable: true,
    }];
    for class in &spec.classes {
        defs.push(ClassDef {
            id: class.id,
            name: format!("class{}", class.id),
            category: "object".into(),
            avg_size: None,
            evaluable: true,
        });
    }
    defs.sort_by_key(|d| d.id);
    ClassTable::new(defs)
}

/// Generates `count` scenes, reseeding each one at base seed + index.
pub(crate) fn generate_dataset(spec: &SceneSpec, count: u32) -> Result<Vec<GeneratedScene>> {
    (0..count)
        .map(|i| {
            let mut per_scene = spec.clone();
            per_scene.rng_seed = spec.rng_seed.wrapping_add(i as u64);
            generate_scene(&per_scene)
        })
        .collect()
}

fn annotation_file(table: &ClassTable, instances: &InstanceSet) -> Result<AnnotationFileOut> {
    let mut objects = Vec::new();
    for inst in instances.instances() {
        let Some((x0, y0, x1, y1)) = inst.bounds() else {
            continue;
        };
        objects.push(AnnotationObjectOut {
            label: table.require(inst.class_id)?.name.clone(),
            polygon: vec![
                [x0 as f64, y0 as f64],
                [x1 as f64, y0 as f64],
                [x1 as f64, y1 as f64],
                [x0 as f64, y1 as f64],
            ],
        });
    }
    Ok(AnnotationFileOut {
        width: instances.width(),
        height: instances.height(),
        objects,
    })
}

/// Writes a dataset directory: one folder per scene plus `classes.json`
/// (with measured average instance sizes) and `manifest.json`. Returns the
/// measured class table.
pub(crate) fn write_dataset(
    out: &Path,
    spec: &SceneSpec,
    dataset: &[GeneratedScene],
) -> Result<ClassTable> {
    ensure_dir(out)?;
    let base = class_table_for_spec(spec)?;
    let sets: Vec<InstanceSet> = dataset.iter().map(|s| s.instances.clone()).collect();
    let table = compute_average_sizes(&sets, &base)?;
    write_class_table(&out.join("classes.json"), &table)?;

    let mut entries = Vec::with_capacity(dataset.len());
    for (i, scene) in dataset.iter().enumerate() {
        let name = scene_name(i);
        let dir = out.join(&name);
        ensure_dir(&dir)?;
        write_ppm(&dir.join("image.ppm"), &scene.image)?;
        write_label_map(&dir.join("gt.pgm"), &scene.gt)?;
        write_json(
            &dir.join("annotations.json"),
            &annotation_file(&table, &scene.instances)?,
        )?;
        write_boxes(&dir.join("boxes.json"), &scene.boxes)?;
        entries.push(ManifestScene {
            image: format!("{name}/image.ppm"),
            gt: format!("{name}/gt.pgm"),
            annotations: format!("{name}/annotations.json"),
            boxes: format!("{name}/boxes.json"),
            name,
        });
    }
    write_json(
        &out.join("manifest.json"),
        &DatasetManifest {
            width: spec.width,
            height: spec.height,
            classes: "classes.json".into(),
            scenes: entries,
        },
    )?;
    Ok(table)
}

pub(crate) fn run_synth(args: &SynthArgs, global: &GlobalArgs) -> CmdResult {
    let cfg: SynthConfig = load_config(global.config.as_deref())?;
    let mut spec: SceneSpec = match (&args.spec, cfg.spec) {
        (Some(path), _) => read_json(path)?,
        (None, Some(spec)) => spec,
        (None, None) => {
            return Err(usage(
                "missing scene description: pass --spec FILE or a --config with a \"spec\" object",
            ))
        }
    };
    let scenes = args.scenes.or(cfg.scenes).unwrap_or(1);
    if scenes == 0 {
        return Err(usage("--scenes must be at least 1"));
    }
    if let Some(seed) = global.seed {
        spec.rng_seed = seed;
    }
    let out = global.out_dir_required()?;

    let dataset = generate_dataset(&spec, scenes)?;
    write_dataset(out, &spec, &dataset)?;
    println!(
        "wrote {scenes} scene(s) under {} (manifest.json, classes.json)",
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// heatmap-gt
// ---------------------------------------------------------------------------

#[derive(clap::Args)]
pub(crate) struct HeatmapGtArgs {
    /// Polygon annotation JSON for one scene.
    #[arg(long, value_name = "FILE")]
    annotations: PathBuf,
    /// Class table JSON (must carry average instance sizes).
    #[arg(long, value_name = "FILE")]
    classes: PathBuf,
    /// Output heatmap tensor.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Dataset-level prior heatmap; when given, the output adds
    /// delta * prior on top of the per-scene map.
    #[arg(long, value_name = "FILE")]
    prior: Option<PathBuf>,
    /// Weight of the prior term.
    #[arg(long, value_name = "X")]
    delta: Option<f64>,
    /// Heatmap value for pixels no instance covers.
    #[arg(long, value_name = "X")]
    background: Option<f32>,
}

/// Used to learn the scene dimensions before full ingestion.
#[derive(Deserialize)]
struct AnnotationDims {
    width: u32,
    height: u32,
    #[serde(default)]
    #[allow(dead_code)]
    objects: serde_json::Value,
}

pub(crate) fn run_heatmap_gt(args: &HeatmapGtArgs, global: &GlobalArgs) -> CmdResult {
    let mut cfg: HeatmapGtConfig = load_config(global.config.as_deref())?;
    if let Some(delta) = args.delta {
        cfg.delta = delta;
    }
    if let Some(bg) = args.background {
        cfg.background_value = bg;
    }

    let table = read_class_table(&args.classes)?;
    let dims: AnnotationDims = read_json(&args.annotations)?;
    let instances = ingest_polygon_annotations(&args.annotations, &table, dims.width, dims.height)
        .map_err(|e| e.at_path(&args.annotations))?;

    let h = heatmap_h(&instances, &table, &cfg)?;
    let result = match &args.prior {
        None => h,
        Some(prior_path) => {
            let g = read_heatmap_file(prior_path)?;
            heatmap_v(&h, &g, cfg.delta).map_err(|e| e.at_path(prior_path))?
        }
    };

    let out = global.resolve_out(&args.out);
    ensure_parent(&out)?;
    write_heatmap(&out, &result)?;
    println!(
        "wrote {}x{} heatmap (mean {:.6}) to {}",
        result.width(),
        result.height(),
        result.mean(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// global-prior
// ---------------------------------------------------------------------------

#[derive(clap::Args)]
pub(crate) struct GlobalPriorArgs {
    /// Per-scene heatmap tensors to average.
    #[arg(value_name = "FVT1", num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Output heatmap tensor.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Output width (default: width of the first input).
    #[arg(long, value_name = "N")]
    width: Option<u32>,
    /// Output height (default: height of the first input).
    #[arg(long, value_name = "N")]
    height: Option<u32>,
}

pub(crate) fn run_global_prior(args: &GlobalPriorArgs, global: &GlobalArgs) -> CmdResult {
    let heatmaps: Vec<PerspectiveHeatmap> = args
        .inputs
        .iter()
        .map(|p| read_heatmap_file(p))
        .collect::<Result<_>>()?;
    let width = args.width.unwrap_or_else(|| heatmaps[0].width());
    let height = args.height.unwrap_or_else(|| heatmaps[0].height());

    let prior = global_prior(&heatmaps, width, height)?;
    let out = global.resolve_out(&args.out);
    ensure_parent(&out)?;
    write_heatmap(&out, &prior)?;
    println!(
        "averaged {} heatmap(s) into {}x{} prior at {}",
        args.inputs.len(),
        width,
        height,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fovea
// ---------------------------------------------------------------------------

#[derive(clap::Args)]
pub(crate) struct FoveaArgs {
    /// Heatmap tensor to search.
    #[arg(long, value_name = "FILE")]
    heatmap: PathBuf,
    /// Output window JSON.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Window width as a fraction of image width (default 0.5).
    #[arg(long, value_name = "X")]
    win_frac_w: Option<f64>,
    /// Window height as a fraction of image height (default 0.5).
    #[arg(long, value_name = "X")]
    win_frac_h: Option<f64>,
    /// Search stride in pixels (default 1).
    #[arg(long, value_name = "N")]
    stride: Option<u32>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct FoveaConfig {
    win_frac_w: Option<f64>,
    win_frac_h: Option<f64>,
    stride: Option<u32>,
}

pub(crate) fn run_fovea(args: &FoveaArgs, global: &GlobalArgs) -> CmdResult {
    let cfg: FoveaConfig = load_config(global.config.as_deref())?;
    let win_frac_w = args.win_frac_w.or(cfg.win_frac_w).unwrap_or(0.5);
    let win_frac_h = args.win_frac_h.or(cfg.win_frac_h).unwrap_or(0.5);
    let stride = args.stride.or(cfg.stride).unwrap_or(1);

    let heatmap = read_heatmap_file(&args.heatmap)?;
    let rect = locate_fovea(&heatmap, win_frac_w, win_frac_h, stride)?;
    let out = global.resolve_out(&args.out);
    write_json(&out, &rect)?;
    println!(
        "fovea window {}x{} at ({}, {}), mean score {:.6} -> {}",
        rect.width,
        rect.height,
        rect.x0,
        rect.y0,
        rect.mean_score,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

#[derive(clap::Args)]
pub(crate) struct ParseArgs {
    /// Input image (PPM).
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Perspective heatmap steering the fovea window.
    #[arg(long, value_name = "FILE")]
    heatmap: PathBuf,
    /// Where per-pixel scores come from.
    #[arg(long, value_enum, default_value = "file")]
    classifier: ClassifierKindArg,
    /// Precomputed full-image score tensor (file classifier).
    #[arg(long, value_name = "FILE")]
    coarse_scores: Option<PathBuf>,
    /// Precomputed fovea-branch score tensor (file classifier).
    #[arg(long, value_name = "FILE")]
    fovea_scores: Option<PathBuf>,
    /// Ground-truth label map (oracle classifier).
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,
    /// Polygon annotations (oracle classifier).
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,
    /// Class table JSON (oracle classifier).
    #[arg(long, value_name = "FILE")]
    classes: Option<PathBuf>,
    /// Oracle behavior JSON (oracle classifier).
    #[arg(long, value_name = "FILE")]
    oracle_config: Option<PathBuf>,
    /// Fovea window width fraction.
    #[arg(long, value_name = "X")]
    win_frac_w: Option<f64>,
    /// Fovea window height fraction.
    #[arg(long, value_name = "X")]
    win_frac_h: Option<f64>,
    /// Fovea search stride.
    #[arg(long, value_name = "N")]
    stride: Option<u32>,
    /// How fovea scores replace or blend into coarse scores.
    #[arg(long, value_enum)]
    fusion_mode: Option<FusionModeArg>,
    /// Zoom factor applied to the fovea crop.
    #[arg(long, value_name = "N")]
    upscale_factor: Option<u32>,
    /// Resampling for fovea scores being mapped back to window resolution.
    #[arg(long, value_enum)]
    resample: Option<ResampleArg>,
    /// Resampling for the zoomed image crop.
    #[arg(long, value_enum)]
    image_resample: Option<ResampleArg>,
}

fn parse_config_from(args: &ParseArgs, global: &GlobalArgs) -> Result<ParseConfig> {
    let mut cfg: ParseConfig = load_config(global.config.as_deref())?;
    if let Some(v) = args.win_frac_w {
        cfg.win_frac_w = v;
    }
    if let Some(v) = args.win_frac_h {
        cfg.win_frac_h = v;
    }
    if let Some(v) = args.stride {
        cfg.stride = v;
    }
    if let Some(v) = args.fusion_mode {
        cfg.fusion.mode = v.into();
    }
    if let Some(v) = args.upscale_factor {
        cfg.fusion.upscale_factor = v;
    }
    if let Some(v) = args.resample {
        cfg.fusion.resample = v.into();
    }
    if let Some(v) = args.image_resample {
        cfg.image_resample = v.into();
    }
    Ok(cfg)
}

fn build_classifier(
    args: &ParseArgs,
    global: &GlobalArgs,
) -> std::result::Result<Box<dyn PixelClassifier>, super::Failure> {
    match args.classifier {
        ClassifierKindArg::File => {
            let (Some(coarse), Some(fovea)) = (&args.coarse_scores, &args.fovea_scores) else {
                return Err(usage(
                    "the file classifier needs --coarse-scores FILE and --fovea-scores FILE",
                ));
            };
            let maps = vec![read_scores_file(coarse)?, read_scores_file(fovea)?];
            Ok(Box::new(FileBackedClassifier::new(maps)))
        }
        ClassifierKindArg::Oracle => {
            let (Some(gt_path), Some(ann), Some(classes), Some(ocfg_path)) = (
                &args.gt,
                &args.annotations,
                &args.classes,
                &args.oracle_config,
            ) else {
                return Err(usage(
                    "the oracle classifier needs --gt, --annotations, --classes, and --oracle-config",
                ));
            };
            let gt = read_label_map_file(gt_path)?;
            let table = read_class_table(classes)?;
            let instances = ingest_polygon_annotations(ann, &table, gt.width(), gt.height())
                .map_err(|e| e.at_path(ann))?;
            let mut ocfg: OracleConfig = read_json(ocfg_path)?;
            if let Some(seed) = global.seed {
                ocfg.rng_seed = seed;
            }
            let oracle = OracleClassifier::new(gt, instances, ocfg).map_err(|e| e.at_path(ocfg_path))?;
            Ok(Box::new(oracle))
        }
    }
}

pub(crate) fn run_parse(args: &ParseArgs, global: &GlobalArgs) -> CmdResult {
    let cfg = parse_config_from(args, global)?;
    let out = global.out_dir_required()?;
    let classifier = build_classifier(args, global)?;
    let image = read_ppm_file(&args.image)?;
    let heatmap = read_heatmap_file(&args.heatmap)?;
    ensure_dir(out)?;

    let (scores, rect) = run_two_branch(&image, classifier.as_ref(), &heatmap, &cfg)?;
    write_scores(&out.join("scores.fvt1"), &scores)?;
    write_label_map(&out.join("labels.pgm"), &scores.argmax_labels())?;
    write_json(&out.join("fovea.json"), &rect)?;
    println!(
        "parsed {}x{} image; fovea window {}x{} at ({}, {}); outputs under {}",
        image.width(),
        image.height(),
        rect.width,
        rect.height,
        rect.x0,
        rect.y0,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// crf
// ---------------------------------------------------------------------------

#[derive(clap::Args)]
pub(crate) struct CrfArgs {
    /// Per-pixel class score tensor.
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    /// The image the scores were computed on (PPM).
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Detection boxes JSON.
    #[arg(long, value_name = "FILE")]
    boxes: PathBuf,
    /// Perspective heatmap weighting the pairwise terms.
    #[arg(long, value_name = "FILE")]
    heatmap: PathBuf,
    /// Output label map (PGM).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// CRF parameter JSON; library defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    params: Option<PathBuf>,
    /// Write a per-iteration energy trace CSV here.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Override the number of mean-field iterations.
    #[arg(long, value_name = "N")]
    iterations: Option<u32>,
}

/// Runs CRF refinement, optionally recording the energy of the running
/// argmax labeling at iteration 0 (initialization) and after each update.
pub(crate) fn refine_traced(
    scores: &ScoreMap,
    image: &RgbImage,
    boxes: &[DetectionBox],
    heatmap: &PerspectiveHeatmap,
    params: &CrfParams,
    trace_out: Option<&Path>,
) -> Result<LabelMap> {
    let Some(trace_path) = trace_out else {
        return refine(scores, image, boxes, heatmap, params);
    };
    params.validate()?;
    let unary = unary_from_scores(scores);
    let features = features_from_image(image);
    let mut rows = String::from("iteration,energy\n");
    let marginals = mean_field_observed(&unary, &features, boxes, heatmap, params, |it, m| {
        let labels = m.argmax_labels();
        let e = energy(&labels, &unary, &features, boxes, heatmap, params)?;
        rows.push_str(&format!("{it},{e:.9}\n"));
        Ok(())
    })?;
    write_text(trace_path, &rows)?;
    Ok(marginals.argmax_labels())
}

pub(crate) fn run_crf(args: &CrfArgs, global: &GlobalArgs) -> CmdResult {
    let mut params: CrfParams = match &args.params {
        Some(path) => read_json(path)?,
        None => load_config(global.config.as_deref())?,
    };
    if let Some(iterations) = args.iterations {
        params.iterations = iterations;
    }

    let scores = read_scores_file(&args.scores)?;
    let image = read_ppm_file(&args.image)?;
    let heatmap = read_heatmap_file(&args.heatmap)?;
    let boxes = read_boxes_file(&args.boxes, scores.width(), scores.height())?;

    let trace = args.trace.as_ref().map(|p| global.resolve_out(p));
    let labels = refine_traced(&scores, &image, &boxes, &heatmap, &params, trace.as_deref())?;

    let out = global.resolve_out(&args.out);
    ensure_parent(&out)?;
    write_label_map(&out, &labels)?;
    match &trace {
        Some(t) => println!(
            "refined labels -> {} (energy trace: {})",
            out.display(),
            t.display()
        ),
        None => println!("refined labels -> {}", out.display()),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tune-crf
// ---------------------------------------------------------------------------

#[derive(clap::Args)]
pub(crate) struct TuneCrfArgs {
    /// JSON array of CRF parameter sets to evaluate.
    #[arg(long, value_name = "FILE")]
    grid: PathBuf,
    /// Validation manifest JSON; file paths resolve against its directory.
    #[arg(long, value_name = "FILE")]
    val: PathBuf,
    /// Class table JSON.
    #[arg(long, value_name = "FILE")]
    classes: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ValEntry {
    scores: String,
    image: String,
    boxes: String,
    heatmap: String,
    gt: String,
    annotations: String,
}

fn load_val_case(base: &Path, entry: &ValEntry, table: &ClassTable) -> Result<ValCase> {
    let gt = read_label_map_file(&base.join(&entry.gt))?;
    let (w, h) = (gt.width(), gt.height());
    let ann_path = base.join(&entry.annotations);
    let instances = ingest_polygon_annotations(&ann_path, table, w, h)
        .map_err(|e| e.at_path(&ann_path))?;
    Ok(ValCase {
        scores: read_scores_file(&base.join(&entry.scores))?,
        image: read_ppm_file(&base.join(&entry.image))?,
        boxes: read_boxes_file(&base.join(&entry.boxes), w, h)?,
        heatmap: read_heatmap_file(&base.join(&entry.heatmap))?,
        gt,
        instances,
    })
}

fn params_csv_header() -> &'static str {
    "index,w1,w2,theta_alpha,theta_beta,theta_gamma,iterations,mu_fallback,mu_max,epsilon_mean,mean_iou"
}

fn params_csv_row(index: usize, p: &CrfParams, mean_iou: Option<f64>) -> String {
    format!(
        "{index},{},{},{},{},{},{},{},{},{},{}",
        p.w1,
        p.w2,
        p.theta_alpha,
        p.theta_beta,
        p.theta_gamma,
        p.iterations,
        p.mu_fallback,
        p.mu_max,
        p.epsilon_mean,
        fmt_metric(mean_iou)
    )
}

#[derive(Serialize)]
struct BestParamsOut {
    index: usize,
    mean_iou: Option<f64>,
    params: CrfParams,
}

pub(crate) fn run_tune_crf(args: &TuneCrfArgs, global: &GlobalArgs) -> CmdResult {
    let grid: Vec<CrfParams> = read_json(&args.grid)?;
    let table = read_class_table(&args.classes)?;
    let entries: Vec<ValEntry> = read_json(&args.val)?;
    let base = args.val.parent().unwrap_or(Path::new("."));
    let cases: Vec<ValCase> = entries
        .iter()
        .map(|e| load_val_case(base, e, &table))
        .collect::<Result<_>>()?;

    let outcome = grid_search(&grid, &cases, &table).map_err(|e| e.at_path(&args.grid))?;

    let out = global.out_dir_required()?;
    ensure_dir(out)?;
    let mut csv = String::from(params_csv_header());
    csv.push('\n');
    for (i, stats) in outcome.table.iter().enumerate() {
        csv.push_str(&params_csv_row(i, &stats.params, stats.mean_iou));
        csv.push('\n');
    }
    write_text(&out.join("grid_scores.csv"), &csv)?;
    let best_iou = outcome.table[outcome.best_index].mean_iou;
    write_json(
        &out.join("best_params.json"),
        &BestParamsOut {
            index: outcome.best_index,
            mean_iou: best_iou,
            params: outcome.best,
        },
    )?;
    println!(
        "evaluated {} grid point(s) on {} case(s); best index {} with mean IoU {}",
        grid.len(),
        cases.len(),
        outcome.best_index,
        fmt_metric(best_iou)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(clap::Args)]
pub(crate) struct EvalArgs {
    /// Directory with predicted label maps named <scene>.pgm.
    #[arg(long, value_name = "DIR")]
    pred_dir: PathBuf,
    /// Dataset directory containing manifest.json.
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Image region to score (default full).
    #[arg(long, value_enum)]
    region: Option<RegionArg>,
    /// Width/height fraction of the central region (default 0.5).
    #[arg(long, value_name = "X")]
    central_frac: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct EvalConfig {
    region: Option<RegionKind>,
    central_frac: Option<f64>,
}

/// All four metric tables derived from one confusion accumulator.
pub(crate) struct MetricsBundle {
    pub iou_class: MetricTable,
    pub iiou_class: MetricTable,
    pub iou_category: MetricTable,
    pub iiou_category: MetricTable,
}

pub(crate) fn metrics_bundle(acc: &ConfusionAccumulator) -> MetricsBundle {
    MetricsBundle {
        iou_class: iou(acc, MetricLevel::Class),
        iiou_class: iiou(acc, MetricLevel::Class),
        iou_category: iou(acc, MetricLevel::Category),
        iiou_category: iiou(acc, MetricLevel::Category),
    }
}

/// Per-class rows (id, name, IoU, iIoU) sorted by class id. A class appears
/// when either metric scored it; a missing metric leaves an empty cell.
pub(crate) fn class_metric_rows(
    bundle: &MetricsBundle,
) -> Vec<(u16, String, Option<f64>, Option<f64>)> {
    let mut by_id: BTreeMap<u16, (String, Option<f64>, Option<f64>)> = BTreeMap::new();
    for row in &bundle.iou_class.rows {
        let id = row.id.expect("class-level rows carry ids");
        by_id.entry(id).or_insert((row.name.clone(), None, None)).1 = Some(row.value);
    }
    for row in &bundle.iiou_class.rows {
        let id = row.id.expect("class-level rows carry ids");
        by_id.entry(id).or_insert((row.name.clone(), None, None)).2 = Some(row.value);
    }
    by_id
        .into_iter()
        .map(|(id, (name, iou_v, iiou_v))| (id, name, iou_v, iiou_v))
        .collect()
}

#[derive(Serialize)]
pub(crate) struct MetricSummary {
    pub mean: Option<f64>,
    pub values: BTreeMap<String, f64>,
}

pub(crate) fn metric_summary(table: &MetricTable) -> MetricSummary {
    MetricSummary {
        mean: table.mean,
        values: table
            .rows
            .iter()
            .map(|r| (r.name.clone(), r.value))
            .collect(),
    }
}

#[derive(Serialize)]
struct LevelSummary {
    iou: MetricSummary,
    iiou: MetricSummary,
}

#[derive(Serialize)]
struct EvalSummary {
    region: RegionKind,
    central_frac: f64,
    scenes: usize,
    class: LevelSummary,
    category: LevelSummary,
}

pub(crate) fn run_eval(args: &EvalArgs, global: &GlobalArgs) -> CmdResult {
    let cfg: EvalConfig = load_config(global.config.as_deref())?;
    let region: RegionKind = args
        .region
        .map(RegionKind::from)
        .or(cfg.region)
        .unwrap_or(RegionKind::Full);
    let central_frac = args.central_frac.or(cfg.central_frac).unwrap_or(0.5);

    let manifest_path = args.dataset.join("manifest.json");
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let table = read_class_table(&args.dataset.join(&manifest.classes))?;
    let mask = make_region_mask(manifest.width, manifest.height, region, central_frac)?;

    let mut acc = ConfusionAccumulator::new(&table);
    for scene in &manifest.scenes {
        let gt = read_label_map_file(&args.dataset.join(&scene.gt))?;
        let ann_path = args.dataset.join(&scene.annotations);
        let instances =
            ingest_polygon_annotations(&ann_path, &table, gt.width(), gt.height())
                .map_err(|e| e.at_path(&ann_path))?;
        let pred_path = args.pred_dir.join(format!("{}.pgm", scene.name));
        let pred = read_label_map_file(&pred_path)?;
        accumulate(&pred, &gt, &instances, &table, &mask, &mut acc)
            .map_err(|e| e.at_path(&pred_path))?;
    }

    let bundle = metrics_bundle(&acc);
    let out = global.out_dir_required()?;
    ensure_dir(out)?;

    let mut csv = String::from("class,IoU,iIoU\n");
    for (_, name, iou_v, iiou_v) in class_metric_rows(&bundle) {
        csv.push_str(&format!(
            "{name},{},{}\n",
            fmt_metric(iou_v),
            fmt_metric(iiou_v)
        ));
    }
    write_text(&out.join("metrics.csv"), &csv)?;

    let summary = EvalSummary {
        region,
        central_frac,
        scenes: manifest.scenes.len(),
        class: LevelSummary {
            iou: metric_summary(&bundle.iou_class),
            iiou: metric_summary(&bundle.iiou_class),
        },
        category: LevelSummary {
            iou: metric_summary(&bundle.iou_category),
            iiou: metric_summary(&bundle.iiou_category),
        },
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "evaluated {} scene(s); class mean IoU {}, mean iIoU {}; outputs under {}",
        manifest.scenes.len(),
        fmt_metric(bundle.iou_class.mean),
        fmt_metric(bundle.iiou_class.mean),
        out.display()
    );
    Ok(())
}

/// Direct coarse-branch classification: the full image at native scale.
pub(crate) fn classify_coarse(
    classifier: &dyn PixelClassifier,
    image: &RgbImage,
) -> Result<ScoreMap> {
    classifier.classify(image, &Branch::Full)
}
