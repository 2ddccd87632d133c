use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("degenerate pair: {0}")]
    DegeneratePair(String),

    #[error("zero-gradient input: {0}")]
    ZeroGradient(String),

    #[error("symmetry order m={m} does not divide n_theta={n_theta}")]
    Divisibility { m: usize, n_theta: usize },

    #[error("boundary precondition violated: {0}")]
    BoundaryPrecondition(String),

    #[error("non-finite values produced in {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("seam gap {gap:.3e} exceeds weld tolerance {tol:.3e}")]
    SeamGap { gap: f64, tol: f64 },

    #[error("empty mesh")]
    EmptyMesh,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
