//! Day-ahead quantile load forecasting for households with a global-pretrain /
//! per-household finetune workflow, and a linear MPC that dispatches a
//! residential battery against the forecasts.
//!
//! Modules, bottom-up:
//! - [`timeseries`]: quarter-hour grid, calendar covariates, metrics.
//! - [`datagen`]: synthetic cohorts, preprocessing, scaling, splits, CSV.
//! - [`forecaster`]: a small temporal-fusion-style quantile model with
//!   reverse-mode gradients, training and finetuning.
//! - [`mpc`]: dispatch LP, bounded-variable simplex, verification oracles.
//! - [`simulator`]: rolling-horizon closed-loop runs and cohort evaluation.

pub mod datagen;
pub mod forecaster;
pub mod mpc;
pub mod seed;
pub mod simulator;
pub mod timeseries;
