//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, missing required
//! arguments), 2 on data errors (unreadable or malformed inputs, invalid
//! parameter values), 3 on internal errors. Log verbosity is controlled by
//! the `FOVEA_LOG` environment variable (`error`..`trace`).

mod commands;
mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dataio::{
    read_boxes, read_label_map, read_ppm, read_tensor, DetectionBox, LabelMap, PerspectiveHeatmap,
    RgbImage, ScoreMap, Tensor,
};
use crate::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fovea",
    version,
    about = "Perspective-aware scene parsing toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(clap::Args)]
struct GlobalArgs {
    /// JSON file supplying subcommand parameters; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master RNG seed, overriding any seed found in config or spec files.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: one per CPU).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Directory outputs are written under; relative output paths resolve
    /// against it.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Also write plot-ready CSV series (energy traces, metric-vs-stage).
    #[arg(long, global = true)]
    emit_plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of perspective scenes
    Synth(commands::SynthArgs),
    /// Build a perspective heatmap from instance annotations
    HeatmapGt(commands::HeatmapGtArgs),
    /// Average per-scene heatmaps into a dataset-level prior
    GlobalPrior(commands::GlobalPriorArgs),
    /// Locate the mean-densest window of a heatmap
    Fovea(commands::FoveaArgs),
    /// Run the two-branch parser and fuse coarse and fovea scores
    Parse(commands::ParseArgs),
    /// Sharpen a score map with the detection-guided dense CRF
    Crf(commands::CrfArgs),
    /// Grid-search CRF parameters against a validation set
    TuneCrf(commands::TuneCrfArgs),
    /// Score predicted label maps against a dataset's ground truth
    Eval(commands::EvalArgs),
    /// Run synth, heatmaps, parse, CRF, and eval end to end
    Pipeline(pipeline::PipelineArgs),
}

/// A command failure, split by which exit code it maps to.
pub(crate) enum Failure {
    /// Exit 1: the invocation itself was wrong.
    Usage(String),
    /// Exit 2 or 3 depending on the error kind.
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

pub(crate) type CmdResult = std::result::Result<(), Failure>;

pub(crate) fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::Internal(_) | Error::NonFiniteIteration { .. } => 3,
        _ => 2,
    }
}

/// Parses argv, runs the selected subcommand, and returns the process exit
/// code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("FOVEA_LOG"))
        .format_timestamp(None)
        .try_init();

    if let Some(threads) = cli.global.threads {
        if threads > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
            {
                eprintln!("error: could not configure {threads} worker threads: {e}");
                return 3;
            }
        }
    }

    let global = &cli.global;
    let outcome = match cli.command {
        Command::Synth(args) => commands::run_synth(&args, global),
        Command::HeatmapGt(args) => commands::run_heatmap_gt(&args, global),
        Command::GlobalPrior(args) => commands::run_global_prior(&args, global),
        Command::Fovea(args) => commands::run_fovea(&args, global),
        Command::Parse(args) => commands::run_parse(&args, global),
        Command::Crf(args) => commands::run_crf(&args, global),
        Command::TuneCrf(args) => commands::run_tune_crf(&args, global),
        Command::Eval(args) => commands::run_eval(&args, global),
        Command::Pipeline(args) => pipeline::run_pipeline(&args, global),
    };

    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            error_exit_code(&e)
        }
    }
}

impl GlobalArgs {
    /// The output directory, created if necessary.
    pub(crate) fn out_dir_required(&self) -> std::result::Result<&Path, Failure> {
        match &self.out_dir {
            Some(dir) => Ok(dir.as_path()),
            None => Err(usage("this subcommand requires --out-dir DIR")),
        }
    }

    /// Resolves a (possibly relative) output file path against --out-dir.
    pub(crate) fn resolve_out(&self, path: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

// ---------------------------------------------------------------------------
// Shared file helpers. Readers attach the offending path to errors that do
// not already carry one; writers create parent directories as needed.
// ---------------------------------------------------------------------------

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Loads a subcommand config file, or the type's defaults when none given.
pub(crate) fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_heatmap_file(path: &Path) -> Result<PerspectiveHeatmap> {
    read_tensor(path)
        .and_then(Tensor::into_heatmap)
        .map_err(|e| e.at_path(path))
}

pub(crate) fn read_scores_file(path: &Path) -> Result<ScoreMap> {
    read_tensor(path)
        .and_then(Tensor::into_scores)
        .map_err(|e| e.at_path(path))
}

pub(crate) fn read_label_map_file(path: &Path) -> Result<LabelMap> {
    read_label_map(path).map_err(|e| e.at_path(path))
}

pub(crate) fn read_ppm_file(path: &Path) -> Result<RgbImage> {
    read_ppm(path).map_err(|e| e.at_path(path))
}

pub(crate) fn read_boxes_file(path: &Path, width: u32, height: u32) -> Result<Vec<DetectionBox>> {
    read_boxes(path, width, height).map_err(|e| e.at_path(path))
}

/// Formats an optional metric value for CSV: six decimals or an empty cell.
pub(crate) fn fmt_metric(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}
