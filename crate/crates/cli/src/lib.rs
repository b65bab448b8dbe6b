//! `hemscast` command line: synthetic data, pretraining, per-household
//! finetuning and local training, battery simulation and cohort reports.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 invalid
//! configuration, 4 missing or unusable input data, 5 training divergence,
//! 6 dispatch solver failure, 7 output exists without `--force`.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

use hemscast_core::simulator::ModelKind;

use crate::commands::SimSource;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hemscast", version, about = "Household load forecasting and battery dispatch pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "ID")]
    pub household: String,
    /// Defaults to `split.training_days`.
    #[arg(long, value_name = "DAYS")]
    pub training_days: Option<usize>,
    /// Initial learning rate override.
    #[arg(long, value_name = "LR")]
    pub lr: Option<f64>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["weights", "oracle", "persistence", "no_battery"])))]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "ID")]
    pub household: String,
    /// Weight file from `finetune` or `train-local`.
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
    /// Forecast the realized demand.
    #[arg(long)]
    pub oracle: bool,
    /// Forecast yesterday's demand.
    #[arg(long)]
    pub persistence: bool,
    /// Leave the battery idle.
    #[arg(long)]
    pub no_battery: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort of household load CSVs and a manifest.
    GenData(CommonArgs),
    /// Train the global model on the pretraining households.
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
    },
    /// Adapt the global model to one household.
    Finetune(TrainArgs),
    /// Train a model from scratch on one household.
    TrainLocal(TrainArgs),
    /// Run the battery controller over the first test days of one household.
    Simulate(SimulateArgs),
    /// Evaluate every held-out household and training size; write CSVs and charts.
    Report(CommonArgs),
}

fn load(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn train_command(args: &TrainArgs, kind: ModelKind) -> Result<(), CliError> {
    let mut cfg = load(&args.common)?;
    let mut section = match kind {
        ModelKind::Finetuned => cfg.finetune_section(),
        _ => cfg.local_section(),
    };
    if let Some(lr) = args.lr {
        section.initial_lr = lr;
    }
    if let Some(e) = args.epochs {
        section.epochs = e;
        section.early_stopping_patience = section.early_stopping_patience.min(e).max(1);
    }
    match kind {
        ModelKind::Finetuned => cfg.finetune = Some(section),
        _ => cfg.local = Some(section),
    }
    let days = args.training_days.unwrap_or(cfg.split.training_days);
    commands::train_household(&cfg, &args.common.out, args.common.force, kind, &args.household, days)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(common) => commands::gen_data(&load(common)?, &common.out, common.force),
        Command::Pretrain { common, epochs } => {
            let mut cfg = load(common)?;
            if let Some(e) = *epochs {
                cfg.pretrain.epochs = e;
                cfg.pretrain.early_stopping_patience = cfg.pretrain.early_stopping_patience.min(e).max(1);
            }
            commands::pretrain(&cfg, &common.out, common.force)
        }
        Command::Finetune(args) => train_command(args, ModelKind::Finetuned),
        Command::TrainLocal(args) => train_command(args, ModelKind::Local),
        Command::Simulate(args) => {
            let source = match (&args.weights, args.oracle, args.persistence) {
                (Some(p), ..) => SimSource::Weights(p.clone()),
                (None, true, _) => SimSource::Oracle,
                (None, _, true) => SimSource::Persistence,
                _ => SimSource::NoBattery,
            };
            commands::simulate(&load(&args.common)?, &args.common.out, args.common.force, &args.household, &source)
        }
        Command::Report(common) => commands::report(&load(common)?, &common.out, common.force),
    }
}
