use thiserror::Error;

use crate::lp::LpStatus;
use crate::moments::MultiIndex;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate box on coordinate {coord}: [{lo}, {hi}]")]
    DegenerateBox { coord: usize, lo: f64, hi: f64 },

    #[error("affine map is not invertible (zero scale on coordinate {0})")]
    NonInvertibleMap(usize),

    #[error("missing moment {0}")]
    MissingMoment(MultiIndex),

    #[error("duplicate moment {0}")]
    DuplicateMoment(MultiIndex),

    #[error("moment degree must be even, got {0}")]
    OddDegree(u32),

    #[error("need >= 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("sample times must be strictly increasing (sample {0})")]
    NonMonotoneTimes(usize),

    #[error("sample {sample} leaves the box on coordinate {coord} (value {value})")]
    SampleOutOfBox { sample: usize, coord: String, value: f64 },

    #[error("degree budget exceeded: test degree {test} - 1 + dynamics degree {dynamics} > moment degree {moments}")]
    DegreeBudget { test: u32, dynamics: u32, moments: u32 },

    #[error("trajectory escaped the box at t = {time}")]
    Escaped { time: f64 },

    #[error("state explosion at t = {time}")]
    StateExplosion { time: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("LP solver finished with status {status:?}: {message}")]
    Lp { status: LpStatus, message: String },

    #[error("all weights fall below the relative threshold {0}")]
    AllBelowThreshold(f64),

    #[error("grid has {points} points, above the limit of {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error("index {index} references coordinate {coord} outside the grid")]
    ExcludedCoordinate { index: MultiIndex, coord: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// The innermost error, below any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
