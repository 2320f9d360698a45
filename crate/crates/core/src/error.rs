use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid multisine design: {0}")]
    InvalidDesign(String),

    #[error(
        "band [{f_min_hz}, {f_max_hz}] Hz contains no DFT bin (resolution {resolution_hz} Hz)"
    )]
    EmptyBand {
        f_min_hz: f64,
        f_max_hz: f64,
        resolution_hz: f64,
    },

    #[error("realization index {index} out of range (design has {count})")]
    RealizationOutOfRange { index: usize, count: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("record parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("record is empty")]
    EmptyRecord,

    #[error("non-finite {column} value at row {row}")]
    NonFinite { row: usize, column: &'static str },

    #[error("time is not strictly increasing at row {row}")]
    NonMonotoneTime { row: usize },

    #[error("record too short: {required} samples required, {actual} available")]
    InsufficientLength { required: usize, actual: usize },

    #[error("inconsistent metadata: {0}")]
    Metadata(String),

    #[error("spectra are defined on different bin grids")]
    GridMismatch,

    #[error("input spectrum too small at bin {bin} (|U| = {magnitude:e})")]
    WeakInputBin { bin: usize, magnitude: f64 },

    #[error("local regression at bin {bin} is rank deficient")]
    RankDeficient { bin: usize },

    #[error("invalid LPM configuration: {0}")]
    LpmConfig(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("unstable filter: reflection coefficient magnitude {magnitude} at stage {stage}")]
    UnstableFilter { stage: usize, magnitude: f64 },

    #[error("invalid BLA input: {0}")]
    BlaInput(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error classes used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad parameters or configuration supplied by the caller.
    Usage,
    /// Input data failed validation.
    Data,
    /// A numerical procedure could not produce a result.
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidDesign(_)
            | Error::EmptyBand { .. }
            | Error::RealizationOutOfRange { .. }
            | Error::LpmConfig(_)
            | Error::InvalidPlant(_) => ErrorKind::Usage,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::EmptyRecord
            | Error::NonFinite { .. }
            | Error::NonMonotoneTime { .. }
            | Error::InsufficientLength { .. }
            | Error::Metadata(_)
            | Error::GridMismatch
            | Error::BlaInput(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::WeakInputBin { .. }
            | Error::RankDeficient { .. }
            | Error::UndefinedMetric(_)
            | Error::UnstableFilter { .. } => ErrorKind::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
