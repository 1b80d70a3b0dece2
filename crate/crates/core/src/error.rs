use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular Jacobian: pivot {pivot:e} below threshold in column {column}")]
    SingularJacobian { column: usize, pivot: f64 },
    #[error("power flow did not converge after {iterations} iterations (last mismatch {last:e})")]
    NotConverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
    #[error("invalid spin number {0}: 2J+1 must be a positive integer")]
    InvalidSpin(f64),
    #[error("no beta tabulated for spin {0}")]
    UnknownSpin(String),
    #[error("all reservoir couplings are zero")]
    NoCoupling,
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(
        "MAPE undefined: target {value:e} at sample {sample}, output {output} is too close to zero"
    )]
    MapeUndefined {
        sample: usize,
        output: usize,
        value: f64,
    },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("only {converged} of {requested} samples converged")]
    TooFewConverged { requested: usize, converged: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
