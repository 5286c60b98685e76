//! Python extension module over the scene-parsing library.
//!
//! The surface mirrors the high-level pipeline: synthesize a scene, read its
//! perspective heatmap, place the zoom window, run the two-branch parse,
//! refine with the detection-guided CRF, and score predictions against the
//! ground truth. Configuration crosses the boundary as JSON strings using the
//! same schemas as the CLI config files; pixel data crosses as flat
//! row-major lists (`bytes` for the RGB image).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use fovea::crf::{refine, CrfParams};
use fovea::fusion::{run_two_branch, ParseConfig};
use fovea::metrics::{
    accumulate, iiou, iou, ConfusionAccumulator, MetricLevel, MetricTable, RegionMask,
};
use fovea::perspective::{compute_average_sizes, heatmap_h, locate_fovea, HeatmapGtConfig};
use fovea::synth::{
    generate_scene, oracle_classify, GeneratedScene, OracleClassifier, OracleConfig, SceneSpec,
};
use fovea::{ClassDef, ClassTable, LabelMap, PerspectiveHeatmap, ScoreMap};

fn to_py_err(err: fovea::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn json_err(what: &str, err: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("{what}: {err}"))
}

/// Class table covering the spec's background plus every placeable class,
/// with average sizes measured from the generated scene itself.
fn table_for(spec: &SceneSpec, scene: &GeneratedScene) -> Result<ClassTable, fovea::Error> {
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
    let base = ClassTable::new(defs)?;
    compute_average_sizes(&[scene.instances.clone()], &base)
}

/// A synthesized scene: RGB image, per-pixel ground truth, instance masks,
/// detection boxes, and the instance-size heatmap derived from them.
#[pyclass(frozen, module = "pyfovea")]
struct Scene {
    scene: GeneratedScene,
    table: ClassTable,
    heatmap: PerspectiveHeatmap,
}

#[pymethods]
impl Scene {
    #[getter]
    fn width(&self) -> u32 {
        self.scene.gt.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.scene.gt.height()
    }

    /// Ground-truth label ids, row-major.
    fn gt_labels(&self) -> Vec<u16> {
        self.scene.gt.labels().to_vec()
    }

    /// Interleaved RGB bytes, row-major.
    fn image_rgb<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.scene.image.data())
    }

    /// Detection boxes as `(x0, y0, x1, y1, score, class_id)` tuples with
    /// exclusive upper corners.
    fn boxes(&self) -> Vec<(u32, u32, u32, u32, f64, u16)> {
        self.scene
            .boxes
            .iter()
            .map(|b| (b.x0, b.y0, b.x1, b.y1, b.score, b.class_id))
            .collect()
    }

    /// Per-pixel size heatmap (class average size over instance size),
    /// row-major; background pixels are 0.
    fn heatmap(&self) -> Vec<f32> {
        self.heatmap.values().to_vec()
    }

    /// Classes as `(id, name, average_size_or_None)` tuples.
    fn classes(&self) -> Vec<(u16, String, Option<f64>)> {
        self.table
            .classes()
            .iter()
            .map(|c| (c.id, c.name.clone(), c.avg_size))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene({}x{}, {} instances, {} boxes)",
            self.width(),
            self.height(),
            self.scene.instances.instances().len(),
            self.scene.boxes.len()
        )
    }
}

/// Dense per-pixel label scores, row-major with the label axis innermost.
#[pyclass(frozen, module = "pyfovea")]
struct Scores {
    inner: ScoreMap,
}

#[pymethods]
impl Scores {
    #[getter]
    fn width(&self) -> u32 {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height()
    }

    #[getter]
    fn num_labels(&self) -> usize {
        self.inner.num_labels()
    }

    /// Flat score values, length `width * height * num_labels`.
    fn values(&self) -> Vec<f32> {
        self.inner.scores().to_vec()
    }

    /// Highest-scoring label per pixel (ties go to the lowest label id).
    fn argmax(&self) -> Vec<u16> {
        self.inner.argmax_labels().labels().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scores({}x{}, {} labels)",
            self.width(),
            self.height(),
            self.num_labels()
        )
    }
}

/// Generates a synthetic scene from a scene-spec JSON string (same schema as
/// the CLI's `--spec` file).
#[pyfunction]
fn synth_scene(spec_json: &str) -> PyResult<Scene> {
    let spec: SceneSpec = serde_json::from_str(spec_json).map_err(|e| json_err("scene spec", e))?;
    let scene = generate_scene(&spec).map_err(to_py_err)?;
    let table = table_for(&spec, &scene).map_err(to_py_err)?;
    let heatmap = heatmap_h(
        &scene.instances,
        &table,
        &HeatmapGtConfig {
            delta: 1.0,
            background_value: 0.0,
        },
    )
    .map_err(to_py_err)?;
    Ok(Scene {
        scene,
        table,
        heatmap,
    })
}

/// Places the zoom window: returns `(x0, y0, width, height)` of the
/// mean-score-maximizing window of the given fractional size over a
/// row-major heatmap.
#[pyfunction]
#[pyo3(signature = (values, width, height, frac_w = 0.5, frac_h = 0.5, stride = 1))]
fn locate_window(
    values: Vec<f32>,
    width: u32,
    height: u32,
    frac_w: f64,
    frac_h: f64,
    stride: u32,
) -> PyResult<(u32, u32, u32, u32)> {
    let heatmap = PerspectiveHeatmap::new(width, height, values).map_err(to_py_err)?;
    let rect = locate_fovea(&heatmap, frac_w, frac_h, stride).map_err(to_py_err)?;
    Ok((rect.x0, rect.y0, rect.width, rect.height))
}

/// Runs the synthetic classifier over the full image at scale 1 and returns
/// its scores. `oracle_json` uses the CLI's oracle-config schema.
#[pyfunction]
fn coarse_scores(scene: &Scene, oracle_json: &str) -> PyResult<Scores> {
    let cfg: OracleConfig =
        serde_json::from_str(oracle_json).map_err(|e| json_err("oracle config", e))?;
    let inner = oracle_classify(
        &scene.scene.image,
        &scene.scene.gt,
        &scene.scene.instances,
        &cfg,
        1.0,
    )
    .map_err(to_py_err)?;
    Ok(Scores { inner })
}

/// Runs the full two-branch parse (coarse pass, zoomed pass over the located
/// window, score fusion). Returns the fused scores and the window as
/// `(x0, y0, width, height)`. `parse_json` may override any subset of the
/// parse settings; omitted fields take their defaults.
#[pyfunction]
#[pyo3(signature = (scene, oracle_json, parse_json = None))]
fn parse_scene(
    scene: &Scene,
    oracle_json: &str,
    parse_json: Option<&str>,
) -> PyResult<(Scores, (u32, u32, u32, u32))> {
    let cfg: OracleConfig =
        serde_json::from_str(oracle_json).map_err(|e| json_err("oracle config", e))?;
    let parse_cfg: ParseConfig = match parse_json {
        Some(text) => serde_json::from_str(text).map_err(|e| json_err("parse config", e))?,
        None => ParseConfig::default(),
    };
    let classifier = OracleClassifier::new(
        scene.scene.gt.clone(),
        scene.scene.instances.clone(),
        cfg,
    )
    .map_err(to_py_err)?;
    let (fused, rect) = run_two_branch(&scene.scene.image, &classifier, &scene.heatmap, &parse_cfg)
        .map_err(to_py_err)?;
    Ok((
        Scores { inner: fused },
        (rect.x0, rect.y0, rect.width, rect.height),
    ))
}

/// Sharpens scores with the detection-guided dense CRF and returns the
/// refined per-pixel labels. `params_json` may override any subset of the
/// CRF parameters; omitted fields take their defaults.
#[pyfunction]
#[pyo3(signature = (scene, scores, params_json = None))]
fn refine_labels(scene: &Scene, scores: &Scores, params_json: Option<&str>) -> PyResult<Vec<u16>> {
    let params: CrfParams = match params_json {
        Some(text) => serde_json::from_str(text).map_err(|e| json_err("crf params", e))?,
        None => CrfParams::default(),
    };
    let labels = refine(
        &scores.inner,
        &scene.scene.image,
        &scene.scene.boxes,
        &scene.heatmap,
        &params,
    )
    .map_err(to_py_err)?;
    Ok(labels.labels().to_vec())
}

fn table_to_dict<'py>(py: Python<'py>, table: &MetricTable) -> PyResult<Bound<'py, PyDict>> {
    let per_class = PyDict::new(py);
    for row in &table.rows {
        per_class.set_item(row.name.as_str(), row.value)?;
    }
    let out = PyDict::new(py);
    out.set_item("mean", table.mean)?;
    out.set_item("per_class", per_class)?;
    Ok(out)
}

/// Scores a row-major prediction against the scene's ground truth over the
/// full image. Returns `{"iou": {...}, "iiou": {...}}`, each with a `mean`
/// and a `per_class` name-to-value dict (classes that never appear are
/// omitted).
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, scene: &Scene, pred: Vec<u16>) -> PyResult<Bound<'py, PyDict>> {
    let pred = LabelMap::new(scene.width(), scene.height(), pred).map_err(to_py_err)?;
    let mask = RegionMask::full(scene.width(), scene.height());
    let mut acc = ConfusionAccumulator::new(&scene.table);
    accumulate(
        &pred,
        &scene.scene.gt,
        &scene.scene.instances,
        &scene.table,
        &mask,
        &mut acc,
    )
    .map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("iou", table_to_dict(py, &iou(&acc, MetricLevel::Class))?)?;
    out.set_item("iiou", table_to_dict(py, &iiou(&acc, MetricLevel::Class))?)?;
    Ok(out)
}

#[pymodule]
fn pyfovea(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Scores>()?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(locate_window, m)?)?;
    m.add_function(wrap_pyfunction!(coarse_scores, m)?)?;
    m.add_function(wrap_pyfunction!(parse_scene, m)?)?;
    m.add_function(wrap_pyfunction!(refine_labels, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
