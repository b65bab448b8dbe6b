use super::{ForecastError, ModelConfig};
use crate::timeseries::{calendar_features, QuarterSeries, STEPS_PER_DAY};

/// One model input: `input_window` past values ending right before the
/// forecast start, calendar covariates for the past and the horizon, and
/// optionally the `horizon` values that follow.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSample {
    pub past_target: Vec<f64>,
    /// Row-major `input_window x past_covariates`.
    pub past_covariates: Vec<f64>,
    /// Row-major `horizon x future_covariates`.
    pub future_covariates: Vec<f64>,
    pub target: Option<Vec<f64>>,
}

/// Cuts forecast windows out of one (already scaled) series.
#[derive(Debug, Clone)]
pub struct WindowSource<'a> {
    series: &'a QuarterSeries,
    config: &'a ModelConfig,
    past_cov: Vec<f64>,
    future_cov: Vec<f64>,
}

impl<'a> WindowSource<'a> {
    pub fn new(series: &'a QuarterSeries, config: &'a ModelConfig) -> Result<Self, ForecastError> {
        config.validate()?;
        // the horizon may run past the end of the data at inference time
        let calendar = calendar_features(series.start(), series.len() + config.horizon)?;
        Ok(Self {
            series,
            config,
            past_cov: calendar.matrix(&config.past_covariates),
            future_cov: calendar.matrix(&config.future_covariates),
        })
    }

    /// Window whose first forecast step is `start` (an index into the series).
    pub fn sample(&self, start: usize, with_target: bool) -> Result<ForecastSample, ForecastError> {
        let (l, h) = (self.config.input_window, self.config.horizon);
        let end = if with_target { start + h } else { start };
        if start < l || end > self.series.len() {
            return Err(ForecastError::Window { start, needed_before: l, needed_after: if with_target { h } else { 0 } });
        }
        let pc = self.config.past_covariates.len();
        let fc = self.config.future_covariates.len();
        let values = self.series.values();
        Ok(ForecastSample {
            past_target: values[start - l..start].to_vec(),
            past_covariates: self.past_cov[(start - l) * pc..start * pc].to_vec(),
            future_covariates: self.future_cov[start * fc..(start + h) * fc].to_vec(),
            target: with_target.then(|| values[start..start + h].to_vec()),
        })
    }

    /// One window per day, forecasting days `first_day..first_day + days`
    /// from midnight.
    pub fn daily(&self, first_day: usize, days: usize) -> Result<Vec<ForecastSample>, ForecastError> {
        (first_day..first_day + days).map(|d| self.sample(d * STEPS_PER_DAY, true)).collect()
    }

    /// Every day of the series that has a full input window before it.
    pub fn all_daily(&self) -> Result<Vec<ForecastSample>, ForecastError> {
        let first = self.config.input_window.div_ceil(STEPS_PER_DAY);
        let last = (self.series.len().saturating_sub(self.config.horizon)) / STEPS_PER_DAY;
        if last < first {
            return Ok(Vec::new());
        }
        self.daily(first, last - first + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::Unit;
    use chrono::{TimeZone, Utc};

    fn series(days: usize) -> QuarterSeries {
        let start = Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap();
        QuarterSeries::new(start, (0..days * 96).map(|i| i as f64).collect(), Unit::Kw).unwrap()
    }

    #[test]
    fn windows_are_contiguous() {
        let s = series(10);
        let c = ModelConfig::default();
        let src = WindowSource::new(&s, &c).unwrap();
        let w = src.sample(8 * 96, true).unwrap();
        assert_eq!(w.past_target[0], 96.0);
        assert_eq!(*w.past_target.last().unwrap(), (8 * 96 - 1) as f64);
        assert_eq!(w.target.as_ref().unwrap()[0], (8 * 96) as f64);
        assert_eq!(w.past_covariates.len(), 672 * 5);
        assert_eq!(w.future_covariates.len(), 96 * 5);
        // quarter-of-day cosine at midnight
        assert!((w.future_covariates[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_windows_rejected() {
        let s = series(8);
        let c = ModelConfig::default();
        let src = WindowSource::new(&s, &c).unwrap();
        assert!(src.sample(671, true).is_err());
        assert!(src.sample(7 * 96 + 1, true).is_err());
        assert!(src.sample(8 * 96, false).is_ok());
        assert_eq!(src.all_daily().unwrap().len(), 1);
    }
}
