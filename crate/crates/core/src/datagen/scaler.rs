use serde::{Deserialize, Serialize};

use super::DataError;
use crate::timeseries::QuarterSeries;

/// Affine min-max scaling fitted on a training segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: f64,
    pub max: f64,
}

impl ScalerParams {
    pub fn new(min: f64, max: f64) -> Result<Self, DataError> {
        if !(min.is_finite() && max.is_finite()) || max - min <= 1e-9 {
            return Err(DataError::DegenerateRange { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn transform_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&x| transform(x, self)).collect()
    }

    pub fn inverse_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&y| inverse_transform(y, self)).collect()
    }
}

pub fn fit_minmax(train: &QuarterSeries) -> Result<ScalerParams, DataError> {
    let min = train.values().iter().copied().fold(f64::INFINITY, f64::min);
    let max = train.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ScalerParams::new(min, max)
}

/// No clamping: values outside the fitted range map outside [0, 1].
pub fn transform(x: f64, params: &ScalerParams) -> f64 {
    (x - params.min) / params.range()
}

pub fn inverse_transform(y: f64, params: &ScalerParams) -> f64 {
    y * params.range() + params.min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::Unit;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn series(v: Vec<f64>) -> QuarterSeries {
        QuarterSeries::new(Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap(), v, Unit::Kw).unwrap()
    }

    #[test]
    fn affine_examples() {
        let p = fit_minmax(&series(vec![2.0, 4.0])).unwrap();
        assert_eq!(transform(2.0, &p), 0.0);
        assert_eq!(transform(4.0, &p), 1.0);
        assert_eq!(transform(3.0, &p), 0.5);
        assert!((inverse_transform(transform(3.7, &p), &p) - 3.7).abs() <= 1e-12 * 3.7);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(fit_minmax(&series(vec![1.0; 5])), Err(DataError::DegenerateRange { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_in_and_out_of_range(min in -50.0f64..50.0, width in 0.01f64..100.0, x in -1e3f64..1e3) {
            let p = ScalerParams::new(min, min + width).unwrap();
            let back = inverse_transform(transform(x, &p), &p);
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(min.abs()).max(width).max(1.0));
        }
    }
}
