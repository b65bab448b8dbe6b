//! Scaled training, validation and test windows for one household.

use super::{forward, ForecastError, ForecastSample, ModelConfig, ModelWeights, WindowSource};
use crate::datagen::{
    fit_minmax, inverse_transform, pretrain_split, split_dataset, transform, ScalerParams, SplitSpec,
};
use crate::timeseries::{QuarterSeries, Unit, STEPS_PER_DAY};

/// `series` scaled with min-max parameters fitted on `fit`.
pub fn scale_with(series: &QuarterSeries, scaler: &ScalerParams) -> Result<QuarterSeries, ForecastError> {
    Ok(series.map(Unit::Dimensionless, |v| transform(v, scaler))?)
}

/// Windows whose targets lie inside steps `from..to`, starting at `from` and
/// every `stride` steps after it. Starts without a full input window are skipped.
pub fn windows_between(
    src: &WindowSource<'_>,
    config: &ModelConfig,
    from: usize,
    to: usize,
    stride: usize,
) -> Result<Vec<ForecastSample>, ForecastError> {
    if stride == 0 {
        return Err(ForecastError::Config("window stride must be positive".into()));
    }
    let mut out = Vec::new();
    let mut start = from;
    while start + config.horizon <= to {
        if start >= config.input_window {
            out.push(src.sample(start, true)?);
        }
        start += stride;
    }
    Ok(out)
}

/// One household prepared for pretraining: 85/15 chronological split, scaler
/// fitted on the first part, validation windows one day apart.
#[derive(Debug, Clone)]
pub struct PretrainWindows {
    pub scaler: ScalerParams,
    pub train: Vec<ForecastSample>,
    pub val: Vec<ForecastSample>,
}

pub fn pretrain_windows(series: &QuarterSeries, config: &ModelConfig, stride: usize) -> Result<PretrainWindows, ForecastError> {
    let (train_part, _) = pretrain_split(series)?;
    let scaler = fit_minmax(&train_part)?;
    let scaled = scale_with(series, &scaler)?;
    let src = WindowSource::new(&scaled, config)?;
    let cut = train_part.len();
    let train = windows_between(&src, config, 0, cut, stride)?;
    let val = windows_between(&src, config, cut, series.len(), STEPS_PER_DAY)?;
    Ok(PretrainWindows { scaler, train, val })
}

/// Windows of several households pooled for a global model.
pub fn pooled_pretrain_windows<'a>(
    households: impl IntoIterator<Item = &'a QuarterSeries>,
    config: &ModelConfig,
    stride: usize,
) -> Result<(Vec<ForecastSample>, Vec<ForecastSample>), ForecastError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for series in households {
        let w = pretrain_windows(series, config, stride)?;
        train.extend(w.train);
        val.extend(w.val);
    }
    Ok((train, val))
}

/// One held-out household under the train / validation / test protocol.
/// Training windows may reach back before the training segment for their
/// inputs; their targets stay inside it.
#[derive(Debug, Clone)]
pub struct SplitWindows {
    pub scaler: ScalerParams,
    pub train: Vec<ForecastSample>,
    /// One window per validation day, issued at midnight.
    pub val: Vec<ForecastSample>,
    /// One window per test day, issued at midnight.
    pub test: Vec<ForecastSample>,
    /// Unscaled actuals over the test segment.
    pub test_actual: QuarterSeries,
    /// Day index of the first test day within the input series.
    pub test_first_day: usize,
}

pub fn split_windows(
    series: &QuarterSeries,
    spec: &SplitSpec,
    config: &ModelConfig,
    stride: usize,
) -> Result<SplitWindows, ForecastError> {
    let split = split_dataset(series, spec)?;
    let scaler = fit_minmax(&split.train)?;
    let scaled = scale_with(series, &scaler)?;
    let src = WindowSource::new(&scaled, config)?;
    let train_from = split.train_first_day * STEPS_PER_DAY;
    if train_from < config.input_window {
        return Err(ForecastError::Window { start: train_from, needed_before: config.input_window, needed_after: 0 });
    }
    let val_from = train_from + spec.training_days * STEPS_PER_DAY;
    let test_first_day = split.train_first_day + spec.training_days + spec.validation_days;
    let train = windows_between(&src, config, train_from, val_from, stride)?;
    let val = src.daily(val_from / STEPS_PER_DAY, spec.validation_days)?;
    let test = src.daily(test_first_day, spec.test_days())?;
    Ok(SplitWindows { scaler, train, val, test, test_actual: split.test, test_first_day })
}

/// Point forecast in kW at quantile `level`, cut at zero because demand
/// cannot be negative.
pub fn point_forecast_kw(
    weights: &ModelWeights,
    sample: &ForecastSample,
    scaler: &ScalerParams,
    level: f64,
) -> Result<Vec<f64>, ForecastError> {
    let q = forward(weights, sample)?;
    let idx = weights
        .config
        .quantiles
        .iter()
        .position(|&l| (l - level).abs() < 1e-12)
        .ok_or_else(|| ForecastError::Config(format!("model has no quantile level {level}")))?;
    Ok(q.level(idx).into_iter().map(|y| inverse_transform(y, scaler).max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn series(days: usize) -> QuarterSeries {
        let start = Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap();
        let v = (0..days * 96).map(|i| 1.0 + (i % 96) as f64 / 96.0 + (i / 96) as f64 * 0.01).collect();
        QuarterSeries::new(start, v, Unit::Kw).unwrap()
    }

    #[test]
    fn split_windows_follow_the_protocol() {
        let s = series(70);
        let c = ModelConfig::default();
        let w = split_windows(&s, &SplitSpec::with_training_days(14), &c, 96).unwrap();
        assert_eq!(w.train.len(), 14);
        assert_eq!(w.val.len(), 7);
        assert_eq!(w.test.len(), 42);
        assert_eq!(w.test_first_day, 28);
        // first training target is the first day of the training segment
        let first_train_day = 70 - 42 - 7 - 14;
        let expected = transform(s.values()[first_train_day * 96], &w.scaler);
        assert_eq!(w.train[0].target.as_ref().unwrap()[0], expected);
        // scaler only sees the training segment
        let train = s.day_range(first_train_day, 14).unwrap();
        assert_eq!(w.scaler, fit_minmax(&train).unwrap());
    }

    #[test]
    fn stride_multiplies_training_windows() {
        let s = series(70);
        let c = ModelConfig::default();
        let w = split_windows(&s, &SplitSpec::with_training_days(14), &c, 24).unwrap();
        // 14 days of targets, one window every 6 hours, last one must end in the segment
        assert_eq!(w.train.len(), 14 * 4 - 3);
    }

    #[test]
    fn too_little_lookback_is_an_error() {
        let s = series(63);
        let c = ModelConfig::default();
        assert!(split_windows(&s, &SplitSpec::with_training_days(14), &c, 96).is_err());
    }

    #[test]
    fn pretrain_windows_cover_both_parts() {
        let s = series(30);
        let c = ModelConfig::default();
        let w = pretrain_windows(&s, &c, 96).unwrap();
        // 2880 steps, validation is the last 432; training targets end by step 2448
        assert_eq!(w.train.len(), (2448 - 672 - 96) / 96 + 1);
        assert_eq!(w.val.len(), 4);
    }
}
