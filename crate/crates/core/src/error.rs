use std::path::PathBuf;

/// Errors produced by the library. Variants are fine-grained where callers
/// (and tests) need to tell failure modes apart, e.g. the distinct PGM and
/// tensor decode failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed PGM header: {detail}")]
    PgmHeader { detail: String },

    #[error("PGM declares zero dimension ({width}x{height})")]
    PgmZeroDimension { width: u32, height: u32 },

    #[error("PGM maxval is {found}, expected 65535")]
    PgmMaxval { found: u32 },

    #[error("PGM payload truncated: expected {expected} bytes, got {got}")]
    PgmTruncated { expected: usize, got: usize },

    #[error("malformed PPM header: {detail}")]
    PpmHeader { detail: String },

    #[error("PPM payload truncated: expected {expected} bytes, got {got}")]
    PpmTruncated { expected: usize, got: usize },

    #[error("bad tensor magic, expected \"FVT1\"")]
    TensorMagic,

    #[error("unsupported tensor rank {rank}, expected 2 or 3")]
    TensorRank { rank: u32 },

    #[error("tensor declares zero-sized dimension")]
    TensorZeroDimension,

    #[error("tensor payload truncated: expected {expected} values, got {got}")]
    TensorTruncated { expected: usize, got: usize },

    #[error("non-finite tensor value at flat index {index}")]
    TensorNonFinite { index: usize },

    #[error("negative heatmap value {value} at flat index {index}")]
    HeatmapNegative { index: usize, value: f32 },

    #[error("JSON error in {path}: {detail}")]
    Json { path: PathBuf, detail: String },

    #[error("invalid data in {path}: {detail}")]
    DataFile { path: PathBuf, detail: String },

    #[error("unknown class name {name:?}")]
    UnknownClass { name: String },

    #[error("polygon has {vertices} vertices, need at least 3")]
    MalformedPolygon { vertices: usize },

    #[error("detection score {score} outside [0, 1]")]
    BoxScore { score: f64 },

    #[error("degenerate box: ({x0},{y0})-({x1},{y1}) must satisfy x0<x1 and y0<y1")]
    BoxDegenerate { x0: i64, y0: i64, x1: i64, y1: i64 },

    #[error("{what}: dimensions {got_w}x{got_h} do not match expected {want_w}x{want_h}")]
    DimensionMismatch {
        what: &'static str,
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },

    #[error("class {class_id} has no average instance size")]
    MissingAvgSize { class_id: u16 },

    #[error("instance {index} has zero pixel area")]
    ZeroAreaInstance { index: usize },

    #[error("label {label} not present in class table")]
    LabelNotInTable { label: u16 },

    #[error("search window {win_w}x{win_h} larger than image {width}x{height}")]
    WindowTooLarge {
        win_w: u32,
        win_h: u32,
        width: u32,
        height: u32,
    },

    #[error("instance too large for exhaustive search: {labels}^{pixels} labelings exceed the budget")]
    InstanceTooLarge { pixels: usize, labels: usize },

    #[error("non-finite value encountered during mean-field iteration {iteration}")]
    NonFiniteIteration { iteration: usize },

    #[error("invalid {what}: {detail}")]
    InvalidParam { what: &'static str, detail: String },

    #[error("empty {what}")]
    EmptyInput { what: &'static str },

    #[error("classifier failure: {detail}")]
    Classifier { detail: String },

    #[error("could not place object {index} after {retries} retries")]
    ScenePlacement { index: usize, retries: usize },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Json {
            path: path.into(),
            detail: err.to_string(),
        }
    }

    pub fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidParam {
            what,
            detail: detail.into(),
        }
    }

    /// Attaches a file path to an error that carries none, so callers always
    /// learn which input was at fault. Errors that already name a path pass
    /// through unchanged.
    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Io { .. } | Error::Json { .. } | Error::DataFile { .. } => self,
            other => Error::DataFile {
                path: path.into(),
                detail: other.to_string(),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
