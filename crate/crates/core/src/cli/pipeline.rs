//! The end-to-end `pipeline` subcommand: synthesize scenes, build heatmaps,
//! parse with the two-branch oracle, refine with the CRF, and score every
//! stage. All content outputs are deterministic given the seed; wall-clock
//! timings go to a separate `timings.json` so repeated runs stay
//! byte-identical.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::commands::{
    class_metric_rows, classify_coarse, generate_dataset, metrics_bundle, refine_traced,
    scene_name, write_dataset, MetricsBundle,
};
use super::{
    ensure_dir, fmt_metric, load_config, usage, write_json, write_text, CmdResult, GlobalArgs,
};
use crate::crf::CrfParams;
use crate::dataio::{write_heatmap, write_label_map, ClassTable, LabelMap};
use crate::error::Result;
use crate::fusion::{run_two_branch, ParseConfig};
use crate::metrics::{accumulate, make_region_mask, ConfusionAccumulator, RegionKind};
use crate::perspective::{global_prior, heatmap_h, heatmap_v, FoveaRect, HeatmapGtConfig};
use crate::synth::{GeneratedScene, OracleClassifier, OracleConfig, SceneClass, SceneSpec};

#[derive(clap::Args)]
pub(crate) struct PipelineArgs {
    /// Override the configured number of scenes.
    #[arg(long, value_name = "N")]
    scenes: Option<u32>,
}

/// Oracle behavior knobs exposed in the pipeline config. Seed, confusable
/// classes, and label count are derived from the run seed and scene spec.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OracleSettings {
    rho_max: f64,
    area_ref: f64,
    breakdown_area: f64,
    breakdown_frac: f64,
    score_margin: f32,
    score_noise: f32,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            rho_max: 0.8,
            area_ref: 120.0,
            breakdown_area: 150.0,
            breakdown_frac: 0.25,
            score_margin: 3.0,
            score_noise: 0.25,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub(crate) struct PipelineConfig {
    scenes: u32,
    spec: SceneSpec,
    oracle: OracleSettings,
    heatmap: HeatmapGtConfig,
    parse: ParseConfig,
    crf: CrfParams,
    central_frac: f64,
}

fn default_scene_spec() -> SceneSpec {
    SceneSpec {
        width: 64,
        height: 48,
        vanishing_point: [32.0, 18.0],
        background_id: 0,
        background_color: [30, 30, 30],
        classes: vec![
            SceneClass {
                id: 1,
                color: [200, 40, 40],
                real_size: 40.0,
                confusable: 2,
            },
            SceneClass {
                id: 2,
                color: [40, 200, 40],
                real_size: 28.0,
                confusable: 1,
            },
        ],
        num_objects: 7,
        depth_range: [2.0, 12.0],
        rng_seed: 0,
        noise_amplitude: 8,
        max_retries: 200,
    }
}

/// CRF preset tuned for the synthetic scenes: a strong appearance kernel
/// wide enough to bridge corrupted blocks inside uniformly colored objects,
/// plus mild everywhere-on smoothing.
fn default_pipeline_crf() -> CrfParams {
    CrfParams {
        w1: 1.0,
        w2: 0.3,
        theta_alpha: 8.0,
        theta_beta: 20.0,
        theta_gamma: 3.0,
        iterations: 5,
        mu_fallback: 0.25,
        ..CrfParams::default()
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scenes: 6,
            spec: default_scene_spec(),
            oracle: OracleSettings::default(),
            heatmap: HeatmapGtConfig::default(),
            parse: ParseConfig::default(),
            crf: default_pipeline_crf(),
            central_frac: 0.5,
        }
    }
}

fn oracle_seed(master: u64, scene: usize) -> u64 {
    (master ^ 0x6F72_6163_6C65).wrapping_add(scene as u64)
}

// ---------------------------------------------------------------------------
// Summary structures. Field order fixes the JSON key order, keeping repeated
// runs byte-identical.
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RegionReport {
    iou_class_mean: Option<f64>,
    iiou_class_mean: Option<f64>,
    iou_category_mean: Option<f64>,
    iiou_category_mean: Option<f64>,
}

impl RegionReport {
    fn from_bundle(b: &MetricsBundle) -> Self {
        RegionReport {
            iou_class_mean: b.iou_class.mean,
            iiou_class_mean: b.iiou_class.mean,
            iou_category_mean: b.iou_category.mean,
            iiou_category_mean: b.iiou_category.mean,
        }
    }
}

#[derive(Serialize)]
struct VariantReport {
    full: RegionReport,
    central: RegionReport,
    peripheral: RegionReport,
}

#[derive(Serialize)]
struct ResultsReport {
    coarse: VariantReport,
    fused: VariantReport,
    refined: VariantReport,
}

#[derive(Serialize)]
struct WindowReport {
    scene: String,
    x0: u32,
    y0: u32,
    width: u32,
    height: u32,
    mean_score: f64,
}

#[derive(Serialize)]
struct Improvement {
    iiou_class_full_fused_minus_coarse: Option<f64>,
    iou_class_full_refined_minus_coarse: Option<f64>,
}

#[derive(Serialize)]
struct PipelineSummary {
    seed: u64,
    scenes: u32,
    width: u32,
    height: u32,
    central_frac: f64,
    results: ResultsReport,
    fovea_windows: Vec<WindowReport>,
    improvement: Improvement,
}

#[derive(Serialize)]
struct Timings {
    synth_ms: u64,
    heatmaps_ms: u64,
    parse_ms: u64,
    crf_ms: u64,
    eval_ms: u64,
    total_ms: u64,
}

fn eval_variant(
    preds: &[LabelMap],
    dataset: &[GeneratedScene],
    table: &ClassTable,
    kind: RegionKind,
    central_frac: f64,
) -> Result<MetricsBundle> {
    let (w, h) = (dataset[0].gt.width(), dataset[0].gt.height());
    let mask = make_region_mask(w, h, kind, central_frac)?;
    let mut acc = ConfusionAccumulator::new(table);
    for (pred, scene) in preds.iter().zip(dataset) {
        accumulate(pred, &scene.gt, &scene.instances, table, &mask, &mut acc)?;
    }
    Ok(metrics_bundle(&acc))
}

fn write_variant_labels(dir: &Path, maps: &[LabelMap]) -> Result<()> {
    ensure_dir(dir)?;
    for (i, map) in maps.iter().enumerate() {
        write_label_map(&dir.join(format!("{}.pgm", scene_name(i))), map)?;
    }
    Ok(())
}

pub(crate) fn run_pipeline(args: &PipelineArgs, global: &GlobalArgs) -> CmdResult {
    let t_total = Instant::now();
    let mut cfg: PipelineConfig = load_config(global.config.as_deref())?;
    if let Some(n) = args.scenes {
        cfg.scenes = n;
    }
    if cfg.scenes == 0 {
        return Err(usage("--scenes must be at least 1"));
    }
    let out = global.out_dir_required()?;
    ensure_dir(out)?;

    let master_seed = global.seed.unwrap_or(cfg.spec.rng_seed);
    let mut spec = cfg.spec.clone();
    spec.rng_seed = master_seed;

    // Stage 1: synthesize and persist the dataset.
    let t = Instant::now();
    let dataset = generate_dataset(&spec, cfg.scenes)?;
    let table = write_dataset(&out.join("dataset"), &spec, &dataset)?;
    let synth_ms = t.elapsed().as_millis() as u64;

    // Stage 2: per-scene heatmaps, dataset-level prior, combined maps.
    let t = Instant::now();
    let per_scene_h: Vec<_> = dataset
        .iter()
        .map(|s| heatmap_h(&s.instances, &table, &cfg.heatmap))
        .collect::<Result<_>>()?;
    let prior = global_prior(&per_scene_h, spec.width, spec.height)?;
    let hm_dir = out.join("heatmaps");
    ensure_dir(&hm_dir)?;
    write_heatmap(&hm_dir.join("global_prior.fvt1"), &prior)?;
    let mut combined = Vec::with_capacity(per_scene_h.len());
    for (i, h) in per_scene_h.iter().enumerate() {
        let v = heatmap_v(h, &prior, cfg.heatmap.delta)?;
        write_heatmap(&hm_dir.join(format!("{}.fvt1", scene_name(i))), &v)?;
        combined.push(v);
    }
    let heatmaps_ms = t.elapsed().as_millis() as u64;

    // Stages 3 and 4: two-branch parse, then CRF refinement, per scene.
    let mut coarse_maps = Vec::with_capacity(dataset.len());
    let mut fused_maps = Vec::with_capacity(dataset.len());
    let mut refined_maps = Vec::with_capacity(dataset.len());
    let mut windows = Vec::with_capacity(dataset.len());
    let mut parse_ms = 0u64;
    let mut crf_ms = 0u64;
    let fovea_dir = out.join("fovea");
    ensure_dir(&fovea_dir)?;
    for (i, scene) in dataset.iter().enumerate() {
        let oracle_cfg = OracleConfig {
            rho_max: cfg.oracle.rho_max,
            area_ref: cfg.oracle.area_ref,
            breakdown_area: cfg.oracle.breakdown_area,
            breakdown_frac: cfg.oracle.breakdown_frac,
            rng_seed: oracle_seed(master_seed, i),
            confusables: spec.confusables(),
            num_labels: spec.num_labels(),
            score_margin: cfg.oracle.score_margin,
            score_noise: cfg.oracle.score_noise,
        };
        let classifier =
            OracleClassifier::new(scene.gt.clone(), scene.instances.clone(), oracle_cfg)?;

        let t = Instant::now();
        let coarse_scores = classify_coarse(&classifier, &scene.image)?;
        coarse_maps.push(coarse_scores.argmax_labels());
        let (fused_scores, rect) = run_two_branch(&scene.image, &classifier, &combined[i], &cfg.parse)?;
        fused_maps.push(fused_scores.argmax_labels());
        parse_ms += t.elapsed().as_millis() as u64;
        write_json(&fovea_dir.join(format!("{}.json", scene_name(i))), &rect)?;
        windows.push(window_report(i, &rect));

        let t = Instant::now();
        let trace_path = global
            .emit_plots
            .then(|| out.join("plots").join(format!("energy_{}.csv", scene_name(i))));
        let refined = refine_traced(
            &fused_scores,
            &scene.image,
            &scene.boxes,
            &combined[i],
            &cfg.crf,
            trace_path.as_deref(),
        )?;
        crf_ms += t.elapsed().as_millis() as u64;
        refined_maps.push(refined);
    }
    write_variant_labels(&out.join("labels/coarse"), &coarse_maps)?;
    write_variant_labels(&out.join("labels/fused"), &fused_maps)?;
    write_variant_labels(&out.join("labels/refined"), &refined_maps)?;

    // Stage 5: score every variant over every region.
    let t = Instant::now();
    let variants: [(&str, &[LabelMap]); 3] = [
        ("coarse", &coarse_maps),
        ("fused", &fused_maps),
        ("refined", &refined_maps),
    ];
    let regions = [
        ("full", RegionKind::Full),
        ("central", RegionKind::Central),
        ("peripheral", RegionKind::Peripheral),
    ];
    let mut csv = String::from("variant,region,class,IoU,iIoU\n");
    let mut reports: Vec<VariantReport> = Vec::with_capacity(3);
    let mut full_bundles: Vec<MetricsBundle> = Vec::with_capacity(3);
    for (variant_name, preds) in variants {
        let mut region_reports = Vec::with_capacity(3);
        for (region_name, kind) in regions {
            let bundle = eval_variant(preds, &dataset, &table, kind, cfg.central_frac)?;
            for (_, class, iou_v, iiou_v) in class_metric_rows(&bundle) {
                csv.push_str(&format!(
                    "{variant_name},{region_name},{class},{},{}\n",
                    fmt_metric(iou_v),
                    fmt_metric(iiou_v)
                ));
            }
            region_reports.push(RegionReport::from_bundle(&bundle));
            if matches!(kind, RegionKind::Full) {
                full_bundles.push(bundle);
            }
        }
        let mut it = region_reports.into_iter();
        reports.push(VariantReport {
            full: it.next().expect("three regions"),
            central: it.next().expect("three regions"),
            peripheral: it.next().expect("three regions"),
        });
    }
    write_text(&out.join("metrics.csv"), &csv)?;

    let improvement = Improvement {
        iiou_class_full_fused_minus_coarse: diff(
            full_bundles[1].iiou_class.mean,
            full_bundles[0].iiou_class.mean,
        ),
        iou_class_full_refined_minus_coarse: diff(
            full_bundles[2].iou_class.mean,
            full_bundles[0].iou_class.mean,
        ),
    };
    if global.emit_plots {
        let mut plot = String::from("stage,iou_class_mean,iiou_class_mean\n");
        for (idx, (name, _)) in variants.iter().enumerate() {
            plot.push_str(&format!(
                "{name},{},{}\n",
                fmt_metric(full_bundles[idx].iou_class.mean),
                fmt_metric(full_bundles[idx].iiou_class.mean)
            ));
        }
        write_text(&out.join("plots/metric_vs_stage.csv"), &plot)?;
    }

    let mut it = reports.into_iter();
    let summary = PipelineSummary {
        seed: master_seed,
        scenes: cfg.scenes,
        width: spec.width,
        height: spec.height,
        central_frac: cfg.central_frac,
        results: ResultsReport {
            coarse: it.next().expect("three variants"),
            fused: it.next().expect("three variants"),
            refined: it.next().expect("three variants"),
        },
        fovea_windows: windows,
        improvement,
    };
    write_json(&out.join("summary.json"), &summary)?;
    let eval_ms = t.elapsed().as_millis() as u64;

    write_json(
        &out.join("timings.json"),
        &Timings {
            synth_ms,
            heatmaps_ms,
            parse_ms,
            crf_ms,
            eval_ms,
            total_ms: t_total.elapsed().as_millis() as u64,
        },
    )?;

    for (idx, (name, _)) in variants.iter().enumerate() {
        println!(
            "{name}: class mean IoU {} | mean iIoU {}",
            fmt_metric(full_bundles[idx].iou_class.mean),
            fmt_metric(full_bundles[idx].iiou_class.mean)
        );
    }
    println!("summary: {}", out.join("summary.json").display());
    Ok(())
}

fn window_report(index: usize, rect: &FoveaRect) -> WindowReport {
    WindowReport {
        scene: scene_name(index),
        x0: rect.x0,
        y0: rect.y0,
        width: rect.width,
        height: rect.height,
        mean_score: rect.mean_score,
    }
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    }
}
