use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate audio path in manifest: {0}")]
    DuplicatePath(String),
    #[error("signal too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no frames survived speech-activity masking")]
    EmptyResult,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("signal has zero power")]
    ZeroPower,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input too short for the network: {frames} frames (minimum {min})")]
    InputTooShort { frames: usize, min: usize },
    #[error("invalid margins: m0 ({m0}) must exceed m1 ({m1})")]
    InvalidMargins { m0: f64, m1: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty feature matrix")]
    EmptyFeatures,
    #[error("scatter matrix is singular")]
    SingularScatter,
    #[error("zero vector cannot be length-normalized")]
    ZeroVector,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("too few frames: {frames} for {components} components")]
    TooFewFrames { frames: usize, components: usize },
    #[error("empty score series")]
    EmptySeries,
    #[error("empty trial class: {0}")]
    EmptyClass(&'static str),
    #[error("model file version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("missing scores for {0}")]
    MissingScores(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
