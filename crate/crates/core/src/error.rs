use std::path::PathBuf;

use thiserror::Error;

use crate::params::HyperParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}: missing required column `{column}`")]
    Schema { file: String, column: String },

    #[error("{file}: row {row}: {detail}")]
    Integrity {
        file: String,
        row: usize,
        detail: String,
    },

    #[error("{file}: row {row}, column `{column}`: cannot parse {value:?} as a finite number")]
    Parse {
        file: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("variance components are not identifiable: {0}")]
    Unidentifiable(String),

    #[error("sparse factor is stale: {0}")]
    Staleness(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("validity check failed: {0}")]
    Validity(String),

    #[error("objective became non-finite at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        last_valid: Box<HyperParams>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
