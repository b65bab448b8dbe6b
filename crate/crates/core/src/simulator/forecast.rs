use super::SimError;
use crate::datagen::ScalerParams;
use crate::forecaster::{point_forecast_kw, scale_with, ModelWeights, WindowSource};
use crate::timeseries::{QuarterSeries, STEPS_PER_DAY};

/// Source of day-ahead demand forecasts for the simulator.
pub trait DemandForecaster {
    /// Steps of actual history needed before the first forecast.
    fn history_needed(&self) -> usize;

    /// Demand (kW, non-negative) for the `STEPS_PER_DAY` steps starting at
    /// step `issue` of `actual`. Only the oracle looks at or after `issue`.
    fn forecast_day(&self, actual: &QuarterSeries, issue: usize) -> Result<Vec<f64>, SimError>;
}

/// A trained model plus the scaler of the household it forecasts.
#[derive(Debug, Clone)]
pub struct ModelForecaster<'a> {
    pub weights: &'a ModelWeights,
    pub scaler: ScalerParams,
    pub quantile: f64,
}

impl DemandForecaster for ModelForecaster<'_> {
    fn history_needed(&self) -> usize {
        self.weights.config.input_window
    }

    fn forecast_day(&self, actual: &QuarterSeries, issue: usize) -> Result<Vec<f64>, SimError> {
        let config = &self.weights.config;
        if config.horizon != STEPS_PER_DAY {
            return Err(SimError::Config(format!("model horizon {} is not one day", config.horizon)));
        }
        let need = config.input_window;
        if issue < need || issue > actual.len() {
            return Err(SimError::History { needed: need, available: issue.min(actual.len()) });
        }
        let recent = actual.slice(issue - need..issue)?;
        let scaled = scale_with(&recent, &self.scaler)?;
        let src = WindowSource::new(&scaled, config)?;
        let sample = src.sample(need, false)?;
        Ok(point_forecast_kw(self.weights, &sample, &self.scaler, self.quantile)?)
    }
}

/// Returns the realized demand; the best any forecaster can do.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleForecaster;

impl DemandForecaster for OracleForecaster {
    fn history_needed(&self) -> usize {
        0
    }

    fn forecast_day(&self, actual: &QuarterSeries, issue: usize) -> Result<Vec<f64>, SimError> {
        let values = actual.values();
        if issue + STEPS_PER_DAY > values.len() {
            return Err(SimError::Config("actual series ends before the forecast day".into()));
        }
        Ok(values[issue..issue + STEPS_PER_DAY].to_vec())
    }
}

/// Tomorrow looks like today.
#[derive(Debug, Clone, Copy, Default)]
pub struct PersistenceForecaster;

impl DemandForecaster for PersistenceForecaster {
    fn history_needed(&self) -> usize {
        STEPS_PER_DAY
    }

    fn forecast_day(&self, actual: &QuarterSeries, issue: usize) -> Result<Vec<f64>, SimError> {
        if issue == 0 || issue > actual.len() {
            return Err(SimError::History { needed: STEPS_PER_DAY, available: issue.min(actual.len()) });
        }
        Ok(persistence_forecast(&actual.slice(0..issue)?, STEPS_PER_DAY)?.into_values())
    }
}

/// Forecast starting right after `history` where step `t` repeats the value
/// one day earlier (recursively for horizons longer than a day).
pub fn persistence_forecast(history: &QuarterSeries, horizon: usize) -> Result<QuarterSeries, SimError> {
    let n = history.len();
    if n < STEPS_PER_DAY {
        return Err(SimError::History { needed: STEPS_PER_DAY, available: n });
    }
    if horizon == 0 {
        return Err(SimError::Config("persistence horizon must be positive".into()));
    }
    let last_day = &history.values()[n - STEPS_PER_DAY..];
    let values = (0..horizon).map(|t| last_day[t % STEPS_PER_DAY]).collect();
    Ok(QuarterSeries::new(history.end(), values, history.unit())?)
}
