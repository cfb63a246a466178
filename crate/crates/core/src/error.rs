use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown tract id `{0}`")]
    UnknownTract(String),

    #[error("series for tract `{tract}` has no value on {date}")]
    MissingDate { tract: String, date: NaiveDate },

    #[error("missing determinants: {}", format_gaps(.0))]
    MissingDeterminants(Vec<(String, String)>),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss {
        value: f64,
        epoch: usize,
        batch: usize,
        lr: f64,
    },

    #[error("config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_gaps(gaps: &[(String, String)]) -> String {
    gaps.iter()
        .map(|(tract, name)| format!("{tract}:{name}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Invalid(_) => "invalid",
            Error::UnknownTract(_) => "unknown_tract",
            Error::MissingDate { .. } => "missing_date",
            Error::MissingDeterminants(_) => "missing_determinants",
            Error::MissingParameter(_) => "missing_parameter",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
