use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("column {column} has zero norm and lambda is zero; the coordinate is not identified")]
    DegenerateColumn { column: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("matrix is not positive definite: pivot {pivot} is {value:e} (diagonal range [{min_diag:e}, {max_diag:e}])")]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("cell failed at iteration {iteration}: {source}")]
    CellFailed {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
