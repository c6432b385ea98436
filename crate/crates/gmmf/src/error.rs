use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column not found: {0}")]
    MissingColumn(String),

    #[error("non-numeric cell in row {row}, column {column}: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("not grouped data: {0}")]
    NotGrouped(String),

    #[error("degenerate group {group}: fewer than 2 members")]
    DegenerateGroup { group: usize },

    #[error("singular matrix in {context}")]
    Singular { context: String },

    #[error("zero regressor norm")]
    ZeroRegressor,

    #[error("no first-stage signal: x orthogonal to instrument span")]
    NoFirstStageSignal,

    #[error("zero variance: Wald statistic undefined")]
    ZeroVariance,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
