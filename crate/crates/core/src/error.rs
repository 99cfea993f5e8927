use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation and solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("requested {requested} targets but the grid only has {available} pixels")]
    TooManyTargets { requested: usize, available: usize },

    #[error("unknown reference node {0}")]
    UnknownNode(usize),

    #[error("position ({x}, {y}) coincides with a node")]
    CoincidentGeometry { x: f64, y: f64 },

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("need at least {min} subcarriers, got {got}")]
    TooFewSubcarriers { min: usize, got: usize },

    #[error("no delay tap exceeds the detection threshold")]
    LosNotDetected,

    #[error("incidence matrix is rank deficient ({rank} < {cols})")]
    RankDeficient { rank: usize, cols: usize },

    #[error("non-positive variance {0}")]
    NonPositiveVariance(f64),

    #[error("degenerate cavity: precision {0} is not positive")]
    DegenerateCavity(f64),

    #[error("solver diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("empty point set")]
    EmptyPointSet,

    #[error("singular Fisher information matrix")]
    SingularFisher,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("no result rows to emit")]
    NoRows,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
