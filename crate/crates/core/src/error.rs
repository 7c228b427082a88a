use thiserror::Error;

use crate::board::Termination;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot step a terminated state ({})", .0.as_str())]
    Terminated(Termination),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed grid dump: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
