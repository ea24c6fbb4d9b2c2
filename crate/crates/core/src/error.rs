use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("time {t} outside the operator family's range [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("truncation {requested} exceeds basis dimension {dim}")]
    TruncationTooLarge { requested: usize, dim: usize },

    #[error("eigen-solver did not converge for a {dim}x{dim} matrix")]
    EigenNonConvergence { dim: usize },

    #[error("invalid spectral basis: {0}")]
    InvalidBasis(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite state (blow-up) at t = {t}")]
    BlowUp { t: f64 },

    #[error("singular linear solve at t = {t}")]
    SingularSolve { t: f64 },

    #[error("scheme `{scheme}` requires a commuting noise family")]
    NonCommutingNoise { scheme: String },

    #[error("quotient undefined: |u| = {norm:e} is below the floor with eps = 0")]
    VanishingState { norm: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing constants: {0}")]
    MissingConstants(String),

    #[error("{}", match .line { Some(l) => format!("config line {l}: {msg}"), None => format!("config: {msg}") })]
    Config { line: Option<usize>, msg: String },

    #[error("missing file {}", .path.display())]
    MissingFile { path: std::path::PathBuf },

    #[error("empty ensemble: {0}")]
    EmptyEnsemble(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
