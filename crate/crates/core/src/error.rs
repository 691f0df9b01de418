use thiserror::Error;

/// Coefficients reached when coordinate descent hit its sweep cap.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialFit {
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub sweeps: usize,
    pub max_update: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("column {0} is constant (standard deviation below 1e-12)")]
    ConstantColumn(usize),
    #[error("need at least 4 rows, got {0}")]
    TooFewRows(usize),
    #[error("need at least 2 columns, got {0}")]
    TooFewColumns(usize),
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("lasso did not converge after {} sweeps at lambda {}", .0.sweeps, .0.lambda)]
    DidNotConverge(Box<PartialFit>),
    #[error("gram matrix of the selected columns is rank deficient")]
    RankDeficient,
    #[error("{features} features cannot be fitted by OLS on {rows} rows")]
    TooManyFeatures { features: usize, rows: usize },
    #[error("first-stage lasso selected no features")]
    EmptyScreen,
    #[error("bad dimension: {0}")]
    BadDimension(String),
    #[error("positive-definite repair failed (minimum eigenvalue {0:e})")]
    RepairFailed(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
