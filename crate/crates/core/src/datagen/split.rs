use serde::{Deserialize, Serialize};

use super::DataError;
use crate::timeseries::{QuarterSeries, STEPS_PER_DAY};

/// Training sizes evaluated by the finetuning protocol.
pub const ALLOWED_TRAINING_DAYS: [usize; 5] = [14, 21, 28, 35, 42];

/// Chronological layout `[.. | train | validation | test]` anchored at the end
/// of the series, so the test window does not depend on `training_days`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_weeks: usize,
    pub validation_days: usize,
    pub training_days: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_weeks: 6, validation_days: 7, training_days: 14 }
    }
}

impl SplitSpec {
    pub fn with_training_days(training_days: usize) -> Self {
        Self { training_days, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.training_days == 0 || self.validation_days == 0 || self.test_weeks == 0 {
            return Err(DataError::InvalidSplit("every segment needs at least one day".into()));
        }
        Ok(())
    }

    pub fn test_days(&self) -> usize {
        self.test_weeks * 7
    }

    pub fn total_days(&self) -> usize {
        self.training_days + self.validation_days + self.test_days()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: QuarterSeries,
    pub validation: QuarterSeries,
    pub test: QuarterSeries,
    /// Day index (within the input series) where the training segment starts.
    pub train_first_day: usize,
}

pub fn split_dataset(series: &QuarterSeries, spec: &SplitSpec) -> Result<DatasetSplit, DataError> {
    spec.validate()?;
    if series.len() % STEPS_PER_DAY != 0 {
        return Err(DataError::NotWholeDays(series.len()));
    }
    let days = series.days();
    if days < spec.total_days() {
        return Err(DataError::InsufficientLength {
            required: spec.total_days() * STEPS_PER_DAY,
            available: series.len(),
        });
    }
    let test_first = days - spec.test_days();
    let val_first = test_first - spec.validation_days;
    let train_first = val_first - spec.training_days;
    Ok(DatasetSplit {
        train: series.day_range(train_first, spec.training_days)?,
        validation: series.day_range(val_first, spec.validation_days)?,
        test: series.day_range(test_first, spec.test_days())?,
        train_first_day: train_first,
    })
}

/// Chronological 85/15 split; validation gets `floor(0.15 * n)` steps.
pub fn pretrain_split(series: &QuarterSeries) -> Result<(QuarterSeries, QuarterSeries), DataError> {
    let n = series.len();
    let val = n * 15 / 100;
    if val == 0 || val == n {
        return Err(DataError::InsufficientLength { required: 7, available: n });
    }
    Ok((series.slice(0..n - val)?, series.slice(n - val..n)?))
}
