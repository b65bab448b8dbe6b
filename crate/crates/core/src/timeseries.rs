//! Quarter-hour time grid, calendar covariates, battery and tariff parameters,
//! and the two scalar metrics shared by every other module.
//!
//! Power is signed with consumption positive. PV generation is stored as
//! non-positive values so that `demand + pv + u` is the power at the meter.

use std::f64::consts::TAU;
use std::ops::Range;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of one grid step in seconds.
pub const STEP_SECONDS: i64 = 900;
/// Number of grid steps in a UTC day.
pub const STEPS_PER_DAY: usize = 96;
/// Length of one grid step in hours.
pub const DT_HOURS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("timestamp {0} is not aligned to a quarter-hour boundary")]
    Misaligned(DateTime<Utc>),
    #[error("series must contain at least one value")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("series grids differ: {left_start}+{left_len} vs {right_start}+{right_len}")]
    GridMismatch {
        left_start: DateTime<Utc>,
        left_len: usize,
        right_start: DateTime<Utc>,
        right_len: usize,
    },
    #[error("unit mismatch: {0:?} vs {1:?}")]
    UnitMismatch(Unit, Unit),
    #[error("quantile level {0} is outside (0, 1)")]
    QuantileOutOfRange(f64),
    #[error("quantile levels must be strictly increasing")]
    QuantilesNotIncreasing,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("range {start}..{end} is outside a series of length {len}")]
    OutOfRange { start: usize, end: usize, len: usize },
    #[error("invalid battery parameters: {0}")]
    InvalidBattery(String),
    #[error("invalid tariff: {0}")]
    InvalidTariff(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "kW")]
    Kw,
    #[serde(rename = "kWh")]
    Kwh,
    #[serde(rename = "EUR_per_kWh")]
    EurPerKwh,
    #[serde(rename = "dimensionless")]
    Dimensionless,
}

/// Returns an error unless `ts` lies on a quarter-hour boundary.
pub fn check_aligned(ts: DateTime<Utc>) -> Result<(), SeriesError> {
    if ts.timestamp().rem_euclid(STEP_SECONDS) == 0 && ts.timestamp_subsec_nanos() == 0 {
        Ok(())
    } else {
        Err(SeriesError::Misaligned(ts))
    }
}

/// Timestamp of grid step `index` counted from `start`.
pub fn step_time(start: DateTime<Utc>, index: usize) -> DateTime<Utc> {
    start + Duration::seconds(STEP_SECONDS * index as i64)
}

/// A sequence of finite values pinned to a contiguous 15-minute UTC grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarterSeries {
    start: DateTime<Utc>,
    values: Vec<f64>,
    unit: Unit,
}

impl QuarterSeries {
    pub fn new(start: DateTime<Utc>, values: Vec<f64>, unit: Unit) -> Result<Self, SeriesError> {
        check_aligned(start)?;
        if values.is_empty() {
            return Err(SeriesError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite(i));
        }
        Ok(Self { start, values, unit })
    }

    pub fn constant(start: DateTime<Utc>, len: usize, value: f64, unit: Unit) -> Result<Self, SeriesError> {
        Self::new(start, vec![value; len], unit)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    /// First timestamp after the series.
    pub fn end(&self) -> DateTime<Utc> {
        step_time(self.start, self.values.len())
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        step_time(self.start, index)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whole days covered by the series (trailing partial day ignored).
    pub fn days(&self) -> usize {
        self.values.len() / STEPS_PER_DAY
    }

    pub fn same_grid(&self, other: &QuarterSeries) -> bool {
        self.start == other.start && self.values.len() == other.values.len()
    }

    pub fn ensure_same_grid(&self, other: &QuarterSeries) -> Result<(), SeriesError> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(SeriesError::GridMismatch {
                left_start: self.start,
                left_len: self.len(),
                right_start: other.start,
                right_len: other.len(),
            })
        }
    }

    /// Sub-series over a step range.
    pub fn slice(&self, range: Range<usize>) -> Result<QuarterSeries, SeriesError> {
        if range.start >= range.end || range.end > self.values.len() {
            return Err(SeriesError::OutOfRange {
                start: range.start,
                end: range.end,
                len: self.values.len(),
            });
        }
        Ok(QuarterSeries {
            start: self.timestamp(range.start),
            values: self.values[range].to_vec(),
            unit: self.unit,
        })
    }

    /// Sub-series covering whole days `first_day..first_day + days`.
    pub fn day_range(&self, first_day: usize, days: usize) -> Result<QuarterSeries, SeriesError> {
        self.slice(first_day * STEPS_PER_DAY..(first_day + days) * STEPS_PER_DAY)
    }

    /// Same grid, values mapped through `f`.
    pub fn map(&self, unit: Unit, f: impl Fn(f64) -> f64) -> Result<QuarterSeries, SeriesError> {
        QuarterSeries::new(self.start, self.values.iter().map(|&v| f(v)).collect(), unit)
    }
}

/// One calendar covariate derived from a grid timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalendarFeature {
    QuarterOfDaySin,
    QuarterOfDayCos,
    DayOfWeekSin,
    DayOfWeekCos,
    IsWeekend,
    /// Hour of day scaled to [0, 1].
    HourOfDay,
}

impl CalendarFeature {
    pub const DEFAULT_SET: [CalendarFeature; 5] = [
        CalendarFeature::QuarterOfDaySin,
        CalendarFeature::QuarterOfDayCos,
        CalendarFeature::DayOfWeekSin,
        CalendarFeature::DayOfWeekCos,
        CalendarFeature::IsWeekend,
    ];

    pub fn value(self, row: &CalendarRow) -> f64 {
        match self {
            CalendarFeature::QuarterOfDaySin => row.quarter_sin,
            CalendarFeature::QuarterOfDayCos => row.quarter_cos,
            CalendarFeature::DayOfWeekSin => row.weekday_sin,
            CalendarFeature::DayOfWeekCos => row.weekday_cos,
            CalendarFeature::IsWeekend => f64::from(row.is_weekend),
            CalendarFeature::HourOfDay => f64::from(row.hour_of_day) / 23.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalendarRow {
    pub quarter_of_day: u8,
    pub hour_of_day: u8,
    /// 0 = Monday.
    pub day_of_week: u8,
    pub is_weekend: u8,
    pub quarter_sin: f64,
    pub quarter_cos: f64,
    pub weekday_sin: f64,
    pub weekday_cos: f64,
}

impl CalendarRow {
    fn at(ts: DateTime<Utc>) -> Self {
        let quarter_of_day = (ts.hour() * 4 + ts.minute() / 15) as u8;
        let day_of_week = ts.weekday().num_days_from_monday() as u8;
        let quarter_angle = TAU * f64::from(quarter_of_day) / STEPS_PER_DAY as f64;
        let weekday_angle = TAU * f64::from(day_of_week) / 7.0;
        CalendarRow {
            quarter_of_day,
            hour_of_day: ts.hour() as u8,
            day_of_week,
            is_weekend: u8::from(day_of_week >= 5),
            quarter_sin: quarter_angle.sin(),
            quarter_cos: quarter_angle.cos(),
            weekday_sin: weekday_angle.sin(),
            weekday_cos: weekday_angle.cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalendarFeatures {
    pub start: DateTime<Utc>,
    pub rows: Vec<CalendarRow>,
}

impl CalendarFeatures {
    /// Row-major matrix of the selected covariates, one row per step.
    pub fn matrix(&self, features: &[CalendarFeature]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows.len() * features.len());
        for row in &self.rows {
            out.extend(features.iter().map(|f| f.value(row)));
        }
        out
    }
}

/// Calendar covariates for `steps` grid points starting at `start`.
pub fn calendar_features(start: DateTime<Utc>, steps: usize) -> Result<CalendarFeatures, SeriesError> {
    check_aligned(start)?;
    let rows = (0..steps).map(|i| CalendarRow::at(step_time(start, i))).collect();
    Ok(CalendarFeatures { start, rows })
}

/// Battery energy and power limits with a constant round-trip efficiency.
///
/// Charging stores `eta * u * dt`; discharging draws `u * dt / eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Usable capacity in kWh.
    pub e_max: f64,
    /// Maximum discharge power in kW (non-positive).
    pub u_min: f64,
    /// Maximum charge power in kW (non-negative).
    pub u_max: f64,
    pub eta: f64,
    /// State of charge at the first step, kWh.
    pub e_init: f64,
}

impl BatteryParams {
    pub fn new(e_max: f64, u_min: f64, u_max: f64, eta: f64, e_init: f64) -> Result<Self, SeriesError> {
        let params = Self { e_max, u_min, u_max, eta, e_init };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), SeriesError> {
        let all = [self.e_max, self.u_min, self.u_max, self.eta, self.e_init];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SeriesError::InvalidBattery("non-finite parameter".into()));
        }
        if !(0.0 <= self.e_init && self.e_init <= self.e_max) {
            return Err(SeriesError::InvalidBattery(format!(
                "need 0 <= e_init ({}) <= e_max ({})",
                self.e_init, self.e_max
            )));
        }
        if !(self.u_min <= 0.0 && self.u_max >= 0.0) {
            return Err(SeriesError::InvalidBattery(format!(
                "need u_min ({}) <= 0 <= u_max ({})",
                self.u_min, self.u_max
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(SeriesError::InvalidBattery(format!("eta {} not in (0, 1]", self.eta)));
        }
        Ok(())
    }

    /// Energy after applying power `u` (kW) for `dt` hours from `energy`.
    pub fn next_energy(&self, energy: f64, u: f64, dt: f64) -> f64 {
        if u >= 0.0 {
            energy + self.eta * u * dt
        } else {
            energy + u * dt / self.eta
        }
    }

    /// Clamp `u` to the power bounds and to what keeps `energy` within [0, e_max].
    pub fn clamp_action(&self, energy: f64, u: f64, dt: f64) -> f64 {
        let u = u.clamp(self.u_min, self.u_max);
        if u >= 0.0 {
            let room = ((self.e_max - energy) / (self.eta * dt)).max(0.0);
            u.min(room)
        } else {
            let avail = (energy * self.eta / dt).max(0.0);
            u.max(-avail)
        }
    }
}

impl Default for BatteryParams {
    /// 10 kWh / 5 kW residential battery, 90% efficiency, starting empty.
    fn default() -> Self {
        Self { e_max: 10.0, u_min: -5.0, u_max: 5.0, eta: 0.9, e_init: 0.0 }
    }
}

/// Consumption and injection prices on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tariff {
    pub lambda_con: QuarterSeries,
    pub lambda_inj: QuarterSeries,
}

/// Injection price as a fraction of the consumption price.
pub const DEFAULT_INJECTION_RATIO: f64 = 0.4;

impl Tariff {
    /// Checks grids and non-negativity. Whether injection prices stay below
    /// consumption prices is checked by the LP builder, see [`Tariff::is_exact`].
    pub fn new(lambda_con: QuarterSeries, lambda_inj: QuarterSeries) -> Result<Self, SeriesError> {
        lambda_con.ensure_same_grid(&lambda_inj)?;
        for (name, s) in [("lambda_con", &lambda_con), ("lambda_inj", &lambda_inj)] {
            if let Some(i) = s.values().iter().position(|&v| v < 0.0) {
                return Err(SeriesError::InvalidTariff(format!("{name}[{i}] is negative")));
            }
        }
        Ok(Self { lambda_con, lambda_inj })
    }

    /// Injection price set to `ratio` times the consumption price.
    pub fn from_consumption(lambda_con: QuarterSeries, ratio: f64) -> Result<Self, SeriesError> {
        let inj = lambda_con.map(Unit::EurPerKwh, |v| v * ratio)?;
        Self::new(lambda_con, inj)
    }

    /// First step where the injection price exceeds the consumption price.
    pub fn first_inexact_step(&self) -> Option<usize> {
        self.lambda_con
            .values()
            .iter()
            .zip(self.lambda_inj.values())
            .position(|(c, i)| i > c)
    }

    pub fn is_exact(&self) -> bool {
        self.first_inexact_step().is_none()
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Tariff, SeriesError> {
        Ok(Tariff {
            lambda_con: self.lambda_con.slice(range.clone())?,
            lambda_inj: self.lambda_inj.slice(range)?,
        })
    }

    pub fn len(&self) -> usize {
        self.lambda_con.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_con.is_empty()
    }
}

/// Mean absolute error in the series' unit.
pub fn mae(forecast: &QuarterSeries, actual: &QuarterSeries) -> Result<f64, SeriesError> {
    forecast.ensure_same_grid(actual)?;
    if forecast.unit() != actual.unit() {
        return Err(SeriesError::UnitMismatch(forecast.unit(), actual.unit()));
    }
    let total: f64 = forecast
        .values()
        .iter()
        .zip(actual.values())
        .map(|(f, a)| (f - a).abs())
        .sum();
    Ok(total / forecast.len() as f64)
}

/// Pinball loss of one prediction at quantile level `q`.
#[inline]
pub fn pinball(q: f64, actual: f64, predicted: f64) -> f64 {
    let r = actual - predicted;
    (q * r).max((q - 1.0) * r)
}

pub fn validate_quantiles(quantiles: &[f64]) -> Result<(), SeriesError> {
    if quantiles.is_empty() {
        return Err(SeriesError::Empty);
    }
    if let Some(&q) = quantiles.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
        return Err(SeriesError::QuantileOutOfRange(q));
    }
    if quantiles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SeriesError::QuantilesNotIncreasing);
    }
    Ok(())
}

/// Mean pinball loss over quantile levels for a single observation.
pub fn pinball_loss(predicted: &[f64], actual: f64, quantiles: &[f64]) -> Result<f64, SeriesError> {
    validate_quantiles(quantiles)?;
    if predicted.len() != quantiles.len() {
        return Err(SeriesError::LengthMismatch { expected: quantiles.len(), got: predicted.len() });
    }
    let total: f64 = quantiles.iter().zip(predicted).map(|(&q, &p)| pinball(q, actual, p)).sum();
    Ok(total / quantiles.len() as f64)
}
