use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("duplicate record for family `{family}`, size {size}, seed {seed}, interactions {interactions}")]
    DuplicateRow {
        family: String,
        size: u64,
        seed: i64,
        interactions: u64,
    },

    #[error("seeds of family `{family}` size {size} do not share an interaction grid: {detail}")]
    InconsistentGrid { family: String, size: u64, detail: String },

    #[error("curve has {found} points, at least {required} required")]
    TooFewPoints { found: usize, required: usize },

    #[error("inputs must be sorted ascending (index {0})")]
    Unsorted(usize),

    #[error("weights must be positive and finite (index {0})")]
    NonPositiveWeight(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("`{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("objective is not finite at the initial point ({0})")]
    NonFiniteObjective(f64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("metric kind `{kind}` does not match form `{form}`")]
    FormMismatch { kind: String, form: String },

    #[error("all data excluded: {0}")]
    AllDataExcluded(String),

    #[error("baseline residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    UntrainedBaseline { residual: f64, tolerance: f64 },

    #[error("constants violate the frontier identities: {0}")]
    InvalidConstants(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositive { name, value })
    }
}
