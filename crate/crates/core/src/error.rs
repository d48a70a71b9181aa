//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // Mesh parsing
    #[error("STL parse error: truncated file at byte offset {offset}")]
    StlTruncated { offset: usize },
    #[error("STL parse error: header declares {declared} facets but payload holds {actual}")]
    StlCountMismatch { declared: usize, actual: usize },
    #[error("STL parse error at line {line}: {message}")]
    StlSyntax { line: usize, message: String },
    #[error("mesh is empty after parsing and degenerate-face filtering")]
    EmptyMesh,
    #[error("face {face} references vertex {vertex} but only {vertex_count} vertices exist")]
    FaceIndexOutOfRange { face: usize, vertex: usize, vertex_count: usize },
    #[error("internal error: zero-area face {face} survived degenerate filtering")]
    DegenerateFaceSurvived { face: usize },

    // Spatial
    #[error("bounding box is degenerate: max must exceed min on every axis")]
    DegenerateBox,
    #[error("grid resolution {m} too small: {required} is required")]
    GridResolution { m: usize, required: usize },
    #[error("volume sampling rejection bound exceeded: accepted {accepted} of {requested} after {candidates} candidates")]
    RejectionBoundExceeded { requested: usize, accepted: usize, candidates: usize },
    #[error("cannot sample an empty surface")]
    EmptySurfaceSampling,

    // Differentiable core
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { context: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("missing gradient for parameter '{name}'")]
    MissingGradient { name: String },
    #[error("unknown parameter '{name}'")]
    UnknownParameter { name: String },
    #[error("conv block requires even grid resolution, got {m}")]
    OddConvResolution { m: usize },

    // Encoder / predictor
    #[error("point {index} at ({x:.6}, {y:.6}, {z:.6}) lies outside the domain box")]
    PointOutsideDomain { index: usize, x: f64, y: f64, z: f64 },
    #[error("unknown solution variable '{name}'")]
    UnknownVariable { name: String },

    // Pipeline
    #[error("non-finite value in {context}: training batch is poisoned")]
    NonFiniteInput { context: String },
    #[error("training loss diverged (non-finite) at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("relative L2 undefined: true field has zero norm")]
    ZeroNormTruth,

    // Dataset generation
    #[error("point ({x:.6}, {y:.6}, {z:.6}) lies inside the body (stretched radius {r:.6} < 1)")]
    PointInsideBody { x: f64, y: f64, z: f64, r: f64 },
    #[error("failed to generate an out-of-distribution sample after {attempts} attempts")]
    OodGenerationFailed { attempts: usize },

    // Container format
    #[error("array container: bad magic (expected \"DMNO\")")]
    BadMagic,
    #[error("array container: unsupported format version {0}")]
    BadVersion(u32),
    #[error("array container: truncated at byte offset {offset}")]
    ContainerTruncated { offset: usize },
    #[error("array container: duplicate entry name '{0}'")]
    DuplicateEntry(String),
    #[error("array container: missing entry '{0}'")]
    MissingEntry(String),
    #[error("array container: entry '{name}' has dtype/rank {found}, expected {expected}")]
    EntryTypeMismatch { name: String, expected: String, found: String },
    #[error("array container: invalid dtype code {0}")]
    BadDtype(u8),

    // Config / CLI
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dataset(msg: impl Into<String>) -> Self {
        Error::Dataset(msg.into())
    }
}
