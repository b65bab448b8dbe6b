use serde::{Deserialize, Serialize};

use super::SimError;
use crate::timeseries::BatteryParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanMode {
    /// One plan per forecast day, applied open loop.
    Daily,
    /// Re-solve every quarter-hour over the rest of the forecast day from the
    /// measured state of charge.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Length of the simulated period in days.
    pub days: usize,
    pub battery: BatteryParams,
    pub replan: ReplanMode,
    /// Quantile level of the forecast handed to the MPC.
    pub point_quantile: f64,
    /// Require each day to end with at least the charge it started with.
    pub terminal_soc: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            days: 7,
            battery: BatteryParams::default(),
            replan: ReplanMode::PerStep,
            point_quantile: 0.5,
            terminal_soc: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.days == 0 {
            return Err(SimError::Config("simulation needs at least one day".into()));
        }
        if !(self.point_quantile > 0.0 && self.point_quantile < 1.0) {
            return Err(SimError::Config(format!("point_quantile {} not in (0, 1)", self.point_quantile)));
        }
        self.battery.validate()?;
        Ok(())
    }
}
