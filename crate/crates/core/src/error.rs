use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing input file: {0}")]
    MissingFile(PathBuf),

    #[error("table {table}: mapped column `{column}` not found in header")]
    MissingColumn { table: String, column: String },

    #[error("table {table}: {bad} of {total} rows failed to parse, above tolerance {tolerance}")]
    ParseToleranceExceeded {
        table: String,
        bad: usize,
        total: usize,
        tolerance: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<usize>),

    #[error("model did not converge after {iterations} iterations: {reason}")]
    NonConvergence { iterations: usize, reason: String },

    #[error("target eGFR {0} not attainable for creatinine in (0.01, 50)")]
    EgfrUnattainable(f64),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code for this error class: 1 data quality, 2 configuration,
    /// 3 numerical non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::RankDeficient(_) => 3,
            Error::ParseToleranceExceeded { .. } | Error::InvalidInput(_) => 1,
            _ => 2,
        }
    }
}
