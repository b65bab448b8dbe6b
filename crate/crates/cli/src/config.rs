//! TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use hemscast_core::datagen::{CohortSpec, SplitSpec};
use hemscast_core::forecaster::{ModelConfig, TrainConfig};
use hemscast_core::simulator::{ReplanMode, SimulationConfig};
use hemscast_core::timeseries::BatteryParams;

use crate::error::{CliError, ErrorKind};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelConfig,
    pub pretrain: TrainSection,
    /// Defaults to a tenth of the pretraining rate and a fifth of its epochs.
    pub finetune: Option<TrainSection>,
    /// Defaults to the pretraining budget.
    pub local: Option<TrainSection>,
    pub split: SplitSection,
    pub evaluation: EvaluationSection,
    pub simulation: SimulationSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Cohort directory read by every command except `gen-data`.
    pub cohort_dir: Option<PathBuf>,
    pub pretrain_households: usize,
    pub heldout_households: usize,
    pub days: usize,
    pub start: DateTime<Utc>,
}

impl Default for DataSection {
    fn default() -> Self {
        let spec = CohortSpec::default();
        Self {
            cohort_dir: None,
            pretrain_households: spec.pretrain_households,
            heldout_households: spec.heldout_households,
            days: spec.days,
            start: spec.start,
        }
    }
}

/// Optimizer budget; the seed is derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub initial_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stopping_patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection::from(&TrainConfig::default())
    }
}

impl From<&TrainConfig> for TrainSection {
    fn from(t: &TrainConfig) -> Self {
        Self {
            initial_lr: t.initial_lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            early_stopping_patience: t.early_stopping_patience,
        }
    }
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            initial_lr: self.initial_lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            early_stopping_patience: self.early_stopping_patience,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub test_weeks: usize,
    pub validation_days: usize,
    /// Used by `finetune`, `train-local` and `simulate` when no size is given.
    pub training_days: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self { test_weeks: s.test_weeks, validation_days: s.validation_days, training_days: s.training_days }
    }
}

impl SplitSection {
    pub fn spec(&self, training_days: usize) -> SplitSpec {
        SplitSpec { test_weeks: self.test_weeks, validation_days: self.validation_days, training_days }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Training sizes in days evaluated by `report`.
    pub sizes: Vec<usize>,
    /// Steps between consecutive training windows.
    pub window_stride: usize,
    /// Run the battery controller for every evaluated model.
    pub control: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { sizes: vec![14, 21, 28, 35, 42], window_stride: 96, control: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub days: usize,
    pub battery: BatteryParams,
    pub replan: ReplanMode,
    pub point_quantile: f64,
    pub terminal_soc: bool,
    /// Peak of the synthetic PV profile, kW.
    pub pv_peak_kw: f64,
    /// `timestamp,value` consumption prices in EUR/kWh; synthetic when absent.
    pub prices_csv: Option<PathBuf>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let s = SimulationConfig::default();
        Self {
            days: s.days,
            battery: s.battery,
            replan: s.replan,
            point_quantile: s.point_quantile,
            terminal_soc: s.terminal_soc,
            pv_peak_kw: 4.0,
            prices_csv: None,
        }
    }
}

impl SimulationSection {
    pub fn config(&self) -> SimulationConfig {
        SimulationConfig {
            days: self.days,
            battery: self.battery,
            replan: self.replan,
            point_quantile: self.point_quantile,
            terminal_soc: self.terminal_soc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Pretrained weights read by `finetune` and `report`.
    pub global_weights: Option<PathBuf>,
}

/// Inputs a command reads, checked before anything is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needs {
    pub cohort: bool,
    pub global_weights: bool,
    pub prices: bool,
}

fn config_err(msg: impl std::fmt::Display) -> CliError {
    CliError::msg(ErrorKind::Config, msg)
}

impl RunConfig {
    /// Reads `path`, resolving relative paths inside it against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::msg(ErrorKind::Config, format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut config.data.cohort_dir);
        resolve(&mut config.paths.global_weights);
        resolve(&mut config.simulation.prices_csv);
        Ok(config)
    }

    pub fn cohort_spec(&self) -> CohortSpec {
        CohortSpec {
            pretrain_households: self.data.pretrain_households,
            heldout_households: self.data.heldout_households,
            days: self.data.days,
            start: self.data.start,
            master_seed: self.seed,
        }
    }

    pub fn finetune_section(&self) -> TrainSection {
        self.finetune.unwrap_or_else(|| TrainSection::from(&TrainConfig::finetune_from(&self.pretrain.with_seed(0))))
    }

    pub fn local_section(&self) -> TrainSection {
        self.local.unwrap_or(self.pretrain)
    }

    /// Finetuning may not use a larger learning rate or more epochs than pretraining.
    pub fn check_finetune_budget(&self) -> Result<(), CliError> {
        let ft = self.finetune_section();
        if ft.initial_lr > self.pretrain.initial_lr || ft.epochs > self.pretrain.epochs {
            return Err(config_err(format!(
                "finetune budget (lr {}, {} epochs) exceeds the pretraining budget (lr {}, {} epochs)",
                ft.initial_lr, ft.epochs, self.pretrain.initial_lr, self.pretrain.epochs
            )));
        }
        Ok(())
    }

    /// Full check of values and of the input paths `needs` names.
    pub fn validate(&self, needs: Needs) -> Result<(), CliError> {
        if self.data.days == 0 {
            return Err(config_err("data.days must be at least 1"));
        }
        if self.data.pretrain_households + self.data.heldout_households == 0 {
            return Err(config_err("the cohort needs at least one household"));
        }
        self.model.validate().map_err(|e| config_err(format!("model: {e}")))?;
        for (name, t) in
            [("pretrain", self.pretrain), ("finetune", self.finetune_section()), ("local", self.local_section())]
        {
            t.with_seed(0).validate().map_err(|e| config_err(format!("{name}: {e}")))?;
        }
        self.split.spec(self.split.training_days).validate().map_err(|e| config_err(format!("split: {e}")))?;
        if self.evaluation.sizes.is_empty() || self.evaluation.sizes.contains(&0) {
            return Err(config_err("evaluation.sizes must list positive day counts"));
        }
        if self.evaluation.window_stride == 0 {
            return Err(config_err("evaluation.window_stride must be positive"));
        }
        self.simulation.config().validate().map_err(|e| config_err(format!("simulation: {e}")))?;
        if !(self.simulation.pv_peak_kw.is_finite() && self.simulation.pv_peak_kw >= 0.0) {
            return Err(config_err("simulation.pv_peak_kw must be finite and non-negative"));
        }
        if self.simulation.days > self.split.test_weeks * 7 {
            return Err(config_err("simulation.days exceeds the test segment"));
        }
        let require = |name: &str, p: &Option<PathBuf>| -> Result<(), CliError> {
            match p {
                None => Err(config_err(format!("{name} is not set"))),
                Some(p) if !p.exists() => {
                    Err(CliError::msg(ErrorKind::Data, format!("{name} {} does not exist", p.display())))
                }
                Some(_) => Ok(()),
            }
        };
        if needs.cohort {
            require("data.cohort_dir", &self.data.cohort_dir)?;
        }
        if needs.global_weights {
            require("paths.global_weights", &self.paths.global_weights)?;
        }
        if needs.prices && self.simulation.prices_csv.is_some() {
            require("simulation.prices_csv", &self.simulation.prices_csv)?;
        }
        Ok(())
    }
}
