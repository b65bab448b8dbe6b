//! Rolling-horizon closed-loop simulation of the home battery controller,
//! its baselines, and cohort-level evaluation.

mod cohort;
mod config;
mod forecast;
mod run;

use std::path::PathBuf;

use thiserror::Error;

use crate::datagen::DataError;
use crate::forecaster::ForecastError;
use crate::mpc::{LpStatus, MpcError};
use crate::timeseries::SeriesError;

pub use cohort::{
    control_inputs, evaluate_cohort, test_mae, write_report_csv, CellFailure, CohortProtocol, CohortReport, CohortRow, CohortSummary, ControlOutcome,
    ControlSetup, ModelKind, Stat,
};
pub use config::{ReplanMode, SimulationConfig};
pub use forecast::{persistence_forecast, DemandForecaster, ModelForecaster, OracleForecaster, PersistenceForecaster};
pub use run::{no_battery_cost, perfect_foresight, simulate_mpc, write_log_csv, SimulationResult, StepRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error("need {needed} steps of history, {available} available")]
    History { needed: usize, available: usize },
    #[error("dispatch LP at period step {step} ended {status:?}")]
    Solver { step: usize, status: LpStatus },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
