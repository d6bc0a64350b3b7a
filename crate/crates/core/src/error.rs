use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("grid too coarse: {cells} cells across the domain, need at least {min}")]
    GridTooCoarse { cells: usize, min: usize },

    #[error("ball of radius {r} around {center:?} leaves the domain (reach {reach})")]
    OutsideDomain { center: Vec<f64>, r: f64, reach: f64 },

    #[error("point {0:?} lies outside the grid hull")]
    OutsideHull(Vec<f64>),

    #[error("center {0:?} is not on the thin plane")]
    CenterOffPlane(Vec<f64>),

    #[error("gradient of h_e is singular on the contact half-line at {0:?}")]
    SingularPoint(Vec<f64>),

    #[error("direction is not a unit vector of R^{dim}: {e:?}")]
    BadDirection { e: Vec<f64>, dim: usize },

    #[error("tangent vector violates orthogonality: {0}")]
    BadTangent(String),

    #[error("incompatible boundary datum: {0}")]
    IncompatibleDatum(String),

    #[error("grid mismatch between fields")]
    GridMismatch,

    #[error("frequency undefined: H = {0} is not positive")]
    UndefinedFrequency(f64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("solver did not converge after {iterations} sweeps (last update {last_update:e})")]
    NotConverged { iterations: usize, last_update: f64, solution: Box<crate::solver::Solution> },

    #[error("energy increased during projected SOR: {before} -> {after} at sweep {sweep}")]
    EnergyIncrease { before: f64, after: f64, sweep: usize },

    #[error("snapshot format error at line {line}: {msg}")]
    Snapshot { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
