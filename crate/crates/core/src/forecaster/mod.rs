//! Quantile day-ahead load forecaster with its own autodiff, training loop
//! and weight format.

mod config;
mod data;
mod dataset;
mod io;
mod model;
pub mod tape;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::datagen::DataError;
use crate::timeseries::SeriesError;

pub use config::{ModelConfig, TrainConfig, CLIP_NORM, MOMENTUM};
pub use data::{ForecastSample, WindowSource};
pub use dataset::{
    point_forecast_kw, pooled_pretrain_windows, pretrain_windows, scale_with, split_windows, windows_between, PretrainWindows, SplitWindows,
};
pub use io::{
    decode_weights, encode_weights, load_weights, save_weights, write_history_csv, FORMAT_VERSION, MAGIC,
};
pub use model::{forward, init_model, parameter_count, ModelWeights, ParamEntry, ParamLayout, QuantileForecast};
pub use train::{evaluate_loss, finetune, loss_and_gradients, train, EpochRecord, TrainHistory};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected} values, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("window starting at step {start} needs {needed_before} steps before and {needed_after} after")]
    Window { start: usize, needed_before: usize, needed_after: usize },
    #[error("sample {0} has no target")]
    MissingTarget(usize),
    #[error("{0} is empty")]
    EmptySet(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged (non-finite loss or gradient) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("weight file format version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("weight file checksum mismatch (truncated or corrupt)")]
    Checksum,
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
