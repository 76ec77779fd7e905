use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid multi-index {indices:?} for ambient dimension {m}: {reason}")]
    InvalidMultiIndex { indices: Vec<usize>, m: usize, reason: &'static str },

    #[error("invalid form: {0}")]
    InvalidForm(String),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid path family: {0}")]
    InvalidFamily(String),

    #[error("invalid configuration at `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("point {x:?} lies within {margin:e} of the domain boundary along axis {axis}")]
    NearBoundary { axis: usize, x: Vec<f64>, margin: f64 },

    #[error("form pullback nonpositive everywhere on the grid")]
    AllDegenerate,

    #[error("Cauchy-Binet mismatch: det(DfᵀDf) = {gram_det:e}, sum of squared minors = {minor_sum:e}")]
    CauchyBinetMismatch { gram_det: f64, minor_sum: f64 },

    #[error("degenerate (zero-area) triangle in cell {cell:?}")]
    DegenerateTriangle { cell: Vec<usize> },

    #[error("mesh is disconnected: no path from node {from} to node {to}")]
    Disconnected { from: usize, to: usize },

    #[error("vertex correspondence missing: {0}")]
    MissingCorrespondence(String),

    #[error("lower stretch vanishes at {x:?} for radius {r:e}: injectivity violated at grid scale")]
    ZeroLowerStretch { x: Vec<f64>, r: f64 },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
