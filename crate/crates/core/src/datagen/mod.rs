//! Synthetic smart-meter cohorts, ingestion, preprocessing, min-max scaling
//! and the chronological train/validation/test layouts.

mod csv;
mod generator;
mod preprocess;
mod scaler;
mod split;

use std::path::PathBuf;

use thiserror::Error;

use crate::timeseries::SeriesError;

pub use csv::{
    format_timestamp, parse_timestamp, read_cohort, read_csv, read_raw_csv, write_cohort, write_csv,
    CohortManifest, HouseholdRole, ManifestEntry, MANIFEST_FILE,
};
pub use generator::{
    generate_cohort, generate_household, sample_profiles, synthetic_cohort, synthetic_prices, synthetic_pv, CohortSpec,
    HouseholdProfile,
};
pub use preprocess::{preprocess, RawSample, MAX_INTERPOLATED_GAP};
pub use scaler::{fit_minmax, inverse_transform, transform, ScalerParams};
pub use split::{pretrain_split, split_dataset, DatasetSplit, SplitSpec, ALLOWED_TRAINING_DAYS};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("invalid household profile {id}: {reason}")]
    InvalidProfile { id: String, reason: String },
    #[error("day count must be at least 1")]
    NoDays,
    #[error("input contains no samples")]
    EmptyInput,
    #[error("{invalid} of {total} grid points are missing or invalid (more than half)")]
    Quality { invalid: usize, total: usize },
    #[error("no complete day survives gap filtering")]
    NoCompleteDay,
    #[error("degenerate scaling range: min {min}, max {max}")]
    DegenerateRange { min: f64, max: f64 },
    #[error("series has {available} steps but {required} are required")]
    InsufficientLength { required: usize, available: usize },
    #[error("series length {0} is not a whole number of days")]
    NotWholeDays(usize),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("row {row}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { row: usize, timestamp: String },
    #[error("row {row}: timestamp {timestamp} is not after the previous row")]
    NonMonotone { row: usize, timestamp: String },
    #[error("row {row}: gap before timestamp {timestamp}")]
    Gap { row: usize, timestamp: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}
