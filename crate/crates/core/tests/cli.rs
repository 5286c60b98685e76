//! End-to-end tests of the command-line interface: exit codes, file
//! formats, cross-subcommand interoperability, and reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fovea::dataio::{read_class_table, read_label_map, read_tensor, Tensor};
use fovea::perspective::{locate_fovea, FoveaRect};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fovea"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fovea binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited without a code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        stderr(out)
    );
}

/// A small scene description used across tests.
fn write_spec(dir: &Path) -> PathBuf {
    let path = dir.join("spec.json");
    fs::write(
        &path,
        r#"{
  "width": 48, "height": 36, "vanishing_point": [24.0, 14.0],
  "background_id": 0, "background_color": [30, 30, 30],
  "classes": [
    {"id": 1, "color": [200, 40, 40], "real_size": 30.0, "confusable": 2},
    {"id": 2, "color": [40, 200, 40], "real_size": 22.0, "confusable": 1}
  ],
  "num_objects": 5, "depth_range": [2.0, 10.0], "rng_seed": 11
}"#,
    )
    .unwrap();
    path
}

fn write_oracle_config(dir: &Path) -> PathBuf {
    let path = dir.join("oracle.json");
    fs::write(
        &path,
        r#"{"rho_max": 0.8, "area_ref": 80.0, "breakdown_area": 120.0,
            "breakdown_frac": 0.25, "rng_seed": 5,
            "confusables": {"1": 2, "2": 1}, "num_labels": 3}"#,
    )
    .unwrap();
    path
}

/// A trimmed pipeline configuration that keeps test runtimes low.
fn write_pipeline_config(dir: &Path) -> PathBuf {
    let path = dir.join("pipeline.json");
    fs::write(
        &path,
        r#"{
  "scenes": 3,
  "spec": {
    "width": 48, "height": 36, "vanishing_point": [24.0, 14.0],
    "background_id": 0, "background_color": [30, 30, 30],
    "classes": [
      {"id": 1, "color": [200, 40, 40], "real_size": 30.0, "confusable": 2},
      {"id": 2, "color": [40, 200, 40], "real_size": 22.0, "confusable": 1}
    ],
    "num_objects": 5, "depth_range": [2.0, 10.0], "rng_seed": 3
  },
  "crf": {"w1": 1.0, "w2": 0.3, "theta_alpha": 8.0, "theta_beta": 20.0,
          "theta_gamma": 3.0, "iterations": 3, "mu_fallback": 0.25},
  "central_frac": 0.5
}"#,
    )
    .unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn synth_dataset(dir: &Path) -> PathBuf {
    let spec = write_spec(dir);
    let ds = dir.join("ds");
    let out = run(&[
        "synth",
        "--spec",
        path_str(&spec),
        "--scenes",
        "2",
        "--out-dir",
        path_str(&ds),
    ]);
    assert_ok(&out);
    ds
}

// ---------------------------------------------------------------------------
// Exit codes and error reporting
// ---------------------------------------------------------------------------

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "synth",
        "heatmap-gt",
        "global-prior",
        "fovea",
        "parse",
        "crf",
        "tune-crf",
        "eval",
        "pipeline",
    ] {
        assert!(text.contains(sub), "help is missing subcommand {sub}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
}

#[test]
fn invalid_flag_value_is_a_usage_error() {
    let out = run(&[
        "eval",
        "--pred-dir",
        "/nonexistent",
        "--dataset",
        "/nonexistent",
        "--region",
        "sideways",
        "--out-dir",
        "/tmp",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_required_inputs_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    // No --spec and no config: the synth invocation itself is incomplete.
    let out = run(&["synth", "--out-dir", path_str(tmp.path())]);
    assert_eq!(code(&out), 1);
    // File classifier without its score files.
    let out = run(&[
        "parse",
        "--image",
        "x.ppm",
        "--heatmap",
        "x.fvt1",
        "--out-dir",
        path_str(tmp.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--coarse-scores"));
}

#[test]
fn missing_input_file_is_a_data_error_naming_the_file() {
    let out = run(&["fovea", "--heatmap", "no_such_heatmap.fvt1", "--out", "r.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no_such_heatmap.fvt1"));
}

#[test]
fn malformed_input_is_a_data_error_naming_file_and_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("classes.json");
    fs::write(&bad, r#"{"not_classes": []}"#).unwrap();
    let ann = tmp.path().join("a.json");
    fs::write(&ann, r#"{"width": 4, "height": 4, "objects": []}"#).unwrap();
    let out = run(&[
        "heatmap-gt",
        "--annotations",
        path_str(&ann),
        "--classes",
        path_str(&bad),
        "--out",
        path_str(&tmp.path().join("h.fvt1")),
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("classes.json"), "stderr: {err}");
    assert!(err.contains("not_classes"), "stderr: {err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"scenes": 1, "bogus_knob": true}"#).unwrap();
    let spec = write_spec(tmp.path());
    let out = run(&[
        "synth",
        "--spec",
        path_str(&spec),
        "--config",
        path_str(&cfg),
        "--out-dir",
        path_str(&tmp.path().join("ds")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bogus_knob"));
}

#[test]
fn invalid_parameter_value_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth_dataset(tmp.path());
    let h = tmp.path().join("h.fvt1");
    let out = run(&[
        "heatmap-gt",
        "--annotations",
        path_str(&ds.join("scene_000/annotations.json")),
        "--classes",
        path_str(&ds.join("classes.json")),
        "--out",
        path_str(&h),
    ]);
    assert_ok(&out);
    let out = run(&[
        "fovea",
        "--heatmap",
        path_str(&h),
        "--out",
        path_str(&tmp.path().join("r.json")),
        "--stride",
        "0",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stride"));
}

// ---------------------------------------------------------------------------
// Subcommand behavior
// ---------------------------------------------------------------------------

#[test]
fn synth_writes_the_documented_dataset_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth_dataset(tmp.path());

    for file in [
        "manifest.json",
        "classes.json",
        "scene_000/image.ppm",
        "scene_000/gt.pgm",
        "scene_000/annotations.json",
        "scene_000/boxes.json",
        "scene_001/image.ppm",
    ] {
        assert!(ds.join(file).is_file(), "missing {file}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ds.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["width"], 48);
    assert_eq!(manifest["height"], 36);
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 2);

    let gt = read_label_map(&ds.join("scene_000/gt.pgm")).unwrap();
    assert_eq!((gt.width(), gt.height()), (48, 36));

    // Object classes placed in the scenes must carry measured average sizes.
    let table = read_class_table(&ds.join("classes.json")).unwrap();
    let placed: Vec<u16> = gt.labels().iter().copied().filter(|&l| l != 0).collect();
    assert!(!placed.is_empty(), "expected objects in the scene");
    for id in placed {
        assert!(
            table.get(id).unwrap().avg_size.is_some(),
            "class {id} has no measured average size"
        );
    }
}

#[test]
fn heatmap_prior_fovea_chain_is_consistent_with_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth_dataset(tmp.path());

    let mut heatmaps = Vec::new();
    for scene in ["scene_000", "scene_001"] {
        let out_path = tmp.path().join(format!("{scene}.fvt1"));
        let out = run(&[
            "heatmap-gt",
            "--annotations",
            path_str(&ds.join(scene).join("annotations.json")),
            "--classes",
            path_str(&ds.join("classes.json")),
            "--out",
            path_str(&out_path),
        ]);
        assert_ok(&out);
        heatmaps.push(out_path);
    }

    let prior = tmp.path().join("prior.fvt1");
    let out = run(&[
        "global-prior",
        path_str(&heatmaps[0]),
        path_str(&heatmaps[1]),
        "--out",
        path_str(&prior),
    ]);
    assert_ok(&out);

    let combined = tmp.path().join("combined.fvt1");
    let out = run(&[
        "heatmap-gt",
        "--annotations",
        path_str(&ds.join("scene_000/annotations.json")),
        "--classes",
        path_str(&ds.join("classes.json")),
        "--prior",
        path_str(&prior),
        "--delta",
        "1.0",
        "--out",
        path_str(&combined),
    ]);
    assert_ok(&out);

    let plain = match read_tensor(&heatmaps[0]).unwrap() {
        Tensor::Heatmap(h) => h,
        _ => panic!("expected a heatmap"),
    };
    let with_prior = match read_tensor(&combined).unwrap() {
        Tensor::Heatmap(h) => h,
        _ => panic!("expected a heatmap"),
    };
    assert!(
        with_prior.mean() > plain.mean(),
        "adding a nonzero prior must raise the mean"
    );

    // The subcommand's window must match a direct library call.
    let rect_path = tmp.path().join("rect.json");
    let out = run(&[
        "fovea",
        "--heatmap",
        path_str(&combined),
        "--out",
        path_str(&rect_path),
        "--win-frac-w",
        "0.5",
        "--win-frac-h",
        "0.5",
        "--stride",
        "1",
    ]);
    assert_ok(&out);
    let from_cli: FoveaRect =
        serde_json::from_str(&fs::read_to_string(&rect_path).unwrap()).unwrap();
    let direct = locate_fovea(&with_prior, 0.5, 0.5, 1).unwrap();
    assert_eq!(from_cli, direct);
}

#[test]
fn parse_oracle_labels_are_the_argmax_of_its_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth_dataset(tmp.path());
    let oracle = write_oracle_config(tmp.path());

    let h = tmp.path().join("h.fvt1");
    assert_ok(&run(&[
        "heatmap-gt",
        "--annotations",
        path_str(&ds.join("scene_000/annotations.json")),
        "--classes",
        path_str(&ds.join("classes.json")),
        "--out",
        path_str(&h),
    ]));

    let out_dir = tmp.path().join("parsed");
    let out = run(&[
        "parse",
        "--image",
        path_str(&ds.join("scene_000/image.ppm")),
        "--heatmap",
        path_str(&h),
        "--classifier",
        "oracle",
        "--gt",
        path_str(&ds.join("scene_000/gt.pgm")),
        "--annotations",
        path_str(&ds.join("scene_000/annotations.json")),
        "--classes",
        path_str(&ds.join("classes.json")),
        "--oracle-config",
        path_str(&oracle),
        "--out-dir",
        path_str(&out_dir),
    ]);
    assert_ok(&out);

    let scores = match read_tensor(&out_dir.join("scores.fvt1")).unwrap() {
        Tensor::Scores(s) => s,
        _ => panic!("expected a score map"),
    };
    let labels = read_label_map(&out_dir.join("labels.pgm")).unwrap();
    assert_eq!(labels.labels(), scores.argmax_labels().labels());

    let rect: FoveaRect =
        serde_json::from_str(&fs::read_to_string(out_dir.join("fovea.json")).unwrap()).unwrap();
    assert!(rect.x0 + rect.width <= 48 && rect.y0 + rect.height <= 36);
}

#[test]
fn crf_writes_labels_and_an_energy_trace_per_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth_dataset(tmp.path());
    let oracle = write_oracle_config(tmp.path());

    let h = tmp.path().join("h.fvt1");
    assert_ok(&run(&[
        "heatmap-gt",
        "--annotations",
        path_str(&ds.join("scene_000/annotations.json")),
        "--classes",
        path_str(&ds.join("classes.json")),
        "--out",
        path_str(&h),
    ]));
    let parsed = tmp.path().join("parsed");
    assert_ok(&run(&[
        "parse",
        "--image",
        path_str(&ds.join("scene_000/image.ppm")),
        "--heatmap",
        path_str(&h),
        "--classifier",
        "oracle",
        "--gt",
        path_str(&ds.join("scene_000/gt.pgm")),
        "--annotations",
        path_str(&ds.join("scene_000/annotations.json")),
        "--classes",
        path_str(&ds.join("classes.json")),
        "--oracle-config",
        path_str(&oracle),
        "--out-dir",
        path_str(&parsed),
    ]));

    let params = tmp.path().join("params.json");
    fs::write(
        &params,
        r#"{"w1": 1.0, "w2": 0.3, "theta_alpha": 8.0, "theta_beta": 20.0,
            "theta_gamma": 3.0, "iterations": 4, "mu_fallback": 0.25}"#,
    )
    .unwrap();
    let refined = tmp.path().join("refined.pgm");
    let trace = tmp.path().join("trace.csv");
    let out = run(&[
        "crf",
        "--scores",
        path_str(&parsed.join("scores.fvt1")),
        "--image",
        path_str(&ds.join("scene_000/image.ppm")),
        "--boxes",
        path_str(&ds.join("scene_000/boxes.json")),
        "--heatmap",
        path_str(&h),
        "--params",
        path_str(&params),
        "--out",
        path_str(&refined),
        "--trace",
        path_str(&trace),
    ]);
    assert_ok(&out);

    let labels = read_label_map(&refined).unwrap();
    assert_eq!((labels.width(), labels.height()), (48, 36));

    let text = fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,energy");
    // Initialization plus one row per iteration.
    assert_eq!(lines.len(), 1 + 4 + 1);
    for (i, line) in lines[1..].iter().enumerate() {
        let (it, energy) = line.split_once(',').expect("two columns");
        assert_eq!(it.parse::<usize>().unwrap(), i);
        assert!(energy.parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn tune_crf_scores_every_grid_point_and_picks_the_best() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth_dataset(tmp.path());
    let oracle = write_oracle_config(tmp.path());

    let h = tmp.path().join("h.fvt1");
    assert_ok(&run(&[
        "heatmap-gt",
        "--annotations",
        path_str(&ds.join("scene_000/annotations.json")),
        "--classes",
        path_str(&ds.join("classes.json")),
        "--out",
        path_str(&h),
    ]));
    let parsed = tmp.path().join("parsed");
    assert_ok(&run(&[
        "parse",
        "--image",
        path_str(&ds.join("scene_000/image.ppm")),
        "--heatmap",
        path_str(&h),
        "--classifier",
        "oracle",
        "--gt",
        path_str(&ds.join("scene_000/gt.pgm")),
        "--annotations",
        path_str(&ds.join("scene_000/annotations.json")),
        "--classes",
        path_str(&ds.join("classes.json")),
        "--oracle-config",
        path_str(&oracle),
        "--out-dir",
        path_str(&parsed),
    ]));

    let grid = tmp.path().join("grid.json");
    fs::write(
        &grid,
        r#"[{"w1": 0.0, "w2": 0.0, "iterations": 2},
            {"w1": 1.0, "w2": 0.3, "theta_alpha": 8.0, "theta_beta": 20.0,
             "theta_gamma": 3.0, "iterations": 3, "mu_fallback": 0.25}]"#,
    )
    .unwrap();
    let val = tmp.path().join("val.json");
    fs::write(
        &val,
        format!(
            r#"[{{"scores": "parsed/scores.fvt1", "image": "ds/scene_000/image.ppm",
                 "boxes": "ds/scene_000/boxes.json", "heatmap": "h.fvt1",
                 "gt": "ds/scene_000/gt.pgm",
                 "annotations": "ds/scene_000/annotations.json"}}]"#
        ),
    )
    .unwrap();

    let out_dir = tmp.path().join("tuned");
    let out = run(&[
        "tune-crf",
        "--grid",
        path_str(&grid),
        "--val",
        path_str(&val),
        "--classes",
        path_str(&ds.join("classes.json")),
        "--out-dir",
        path_str(&out_dir),
    ]);
    assert_ok(&out);

    let csv = fs::read_to_string(out_dir.join("grid_scores.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("index,w1,w2,"));
    assert_eq!(lines.len(), 3, "header plus one row per grid point");

    let best: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("best_params.json")).unwrap())
            .unwrap();
    let best_index = best["index"].as_u64().unwrap() as usize;
    assert!(best_index < 2);
    assert!(best["mean_iou"].as_f64().unwrap() > 0.0);
    assert!(best["params"]["iterations"].is_u64());
}

#[test]
fn eval_agrees_with_the_pipeline_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_pipeline_config(tmp.path());
    let pipe = tmp.path().join("pipe");
    assert_ok(&run(&[
        "pipeline",
        "--config",
        path_str(&cfg),
        "--seed",
        "7",
        "--out-dir",
        path_str(&pipe),
    ]));

    let eval_out = tmp.path().join("eval");
    assert_ok(&run(&[
        "eval",
        "--pred-dir",
        path_str(&pipe.join("labels/refined")),
        "--dataset",
        path_str(&pipe.join("dataset")),
        "--out-dir",
        path_str(&eval_out),
    ]));

    let pipeline: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pipe.join("summary.json")).unwrap()).unwrap();
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_out.join("summary.json")).unwrap()).unwrap();

    assert_eq!(
        pipeline["results"]["refined"]["full"]["iou_class_mean"],
        eval["class"]["iou"]["mean"],
        "standalone eval must reproduce the pipeline's own scoring"
    );
    assert_eq!(
        pipeline["results"]["refined"]["full"]["iiou_class_mean"],
        eval["class"]["iiou"]["mean"]
    );
}

#[test]
fn pipeline_is_byte_deterministic_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_pipeline_config(tmp.path());
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    for (dir, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert_ok(&run(&[
            "pipeline",
            "--config",
            path_str(&cfg),
            "--seed",
            seed,
            "--out-dir",
            path_str(dir),
        ]));
    }

    let rel_files = |root: &Path| -> Vec<PathBuf> {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push(path.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
        files.sort();
        files
    };

    let files_a = rel_files(&a);
    assert_eq!(files_a, rel_files(&b), "runs must produce identical trees");
    assert!(files_a.iter().any(|f| f.ends_with("summary.json")));
    assert!(files_a.iter().any(|f| f.ends_with("metrics.csv")));
    assert!(files_a
        .iter()
        .any(|f| f.to_string_lossy().contains("labels/refined")));

    for file in &files_a {
        if file.file_name().unwrap() == "timings.json" {
            continue; // wall-clock times legitimately differ
        }
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "file {} differs between identical runs",
            file.display()
        );
    }

    assert_ne!(
        fs::read(a.join("summary.json")).unwrap(),
        fs::read(c.join("summary.json")).unwrap(),
        "different seeds must change the outcome"
    );
}

#[test]
fn pipeline_does_not_mutate_its_inputs_and_honors_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_pipeline_config(tmp.path());
    let before = fs::read(&cfg).unwrap();
    let out_dir = tmp.path().join("only_here");
    assert_ok(&run(&[
        "pipeline",
        "--config",
        path_str(&cfg),
        "--seed",
        "9",
        "--out-dir",
        path_str(&out_dir),
    ]));
    assert_eq!(before, fs::read(&cfg).unwrap(), "config file was modified");

    // Everything new lives under the output directory.
    let entries: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let mut expected = vec!["pipeline.json".to_string(), "only_here".to_string()];
    let mut got = entries.clone();
    expected.sort();
    got.sort();
    assert_eq!(got, expected, "unexpected files appeared outside --out-dir");
}

#[test]
fn emit_plots_writes_csv_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_pipeline_config(tmp.path());
    let out_dir = tmp.path().join("plots_run");
    assert_ok(&run(&[
        "pipeline",
        "--config",
        path_str(&cfg),
        "--seed",
        "7",
        "--out-dir",
        path_str(&out_dir),
        "--emit-plots",
    ]));

    let stage = fs::read_to_string(out_dir.join("plots/metric_vs_stage.csv")).unwrap();
    let lines: Vec<&str> = stage.lines().collect();
    assert_eq!(lines[0], "stage,iou_class_mean,iiou_class_mean");
    assert_eq!(lines.len(), 4, "header plus coarse/fused/refined");

    let energy = fs::read_to_string(out_dir.join("plots/energy_scene_000.csv")).unwrap();
    assert!(energy.starts_with("iteration,energy\n"));
    assert!(energy.lines().count() >= 2);
}
