use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid distance matrix: {0}")]
    InvalidDistance(String),

    #[error("invalid data matrix: {0}")]
    InvalidData(String),

    #[error("degenerate kernel scale: median off-diagonal distance is zero")]
    DegenerateScale,

    #[error("singular degree at index {0}")]
    SingularDegree(usize),

    #[error("need at least {need} landmarks, got {got}")]
    InsufficientLandmarks { need: usize, got: usize },

    #[error("invalid density entry {value} at ({row}, {col}) for scale {scale}")]
    InvalidDensity {
        scale: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("tree needs at least 2 leaves, got {0}")]
    TrivialInput(usize),

    #[error("unknown leaf label {0}")]
    UnknownLeaf(usize),

    #[error("all coefficients are zero; nothing to select")]
    EmptySelection,

    #[error("row {row} has zero mass{}", .iteration.map(|l| format!(" at iteration {l}")).unwrap_or_default())]
    ZeroMass { row: usize, iteration: Option<usize> },

    #[error("marginals differ: {0} vs {1}")]
    Marginal(f64, f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("newick parse error at byte {pos}: {msg}")]
    Newick { pos: usize, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
