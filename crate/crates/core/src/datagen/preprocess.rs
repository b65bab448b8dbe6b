use chrono::{DateTime, TimeZone, Utc};

use super::DataError;
use crate::timeseries::{QuarterSeries, Unit, STEPS_PER_DAY, STEP_SECONDS};

/// Longest run of missing steps (one hour) repaired by linear interpolation.
pub const MAX_INTERPOLATED_GAP: usize = 4;

/// A raw meter reading; `None` marks a null.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    pub timestamp: DateTime<Utc>,
    pub value: Option<f64>,
}

impl RawSample {
    pub fn new(timestamp: DateTime<Utc>, value: Option<f64>) -> Self {
        Self { timestamp, value }
    }
}

/// Nearest-rank quantile of sorted data.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Upper clip bound `q99.9 + 3 * IQR` (nearest-rank quantiles).
fn clip_bound(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = nearest_rank(&sorted, 0.75) - nearest_rank(&sorted, 0.25);
    nearest_rank(&sorted, 0.999) + 3.0 * iqr
}

/// Turns raw readings into a clean kW series on the quarter-hour grid.
///
/// 1. Timestamps snap to the nearest quarter hour; readings sharing a slot are averaged.
/// 2. The grid spans whole UTC days from the first to the last reading.
/// 3. Missing, null and non-finite slots count as invalid; more than half invalid is an error.
/// 4. Interior gaps of at most [`MAX_INTERPOLATED_GAP`] steps are linearly interpolated.
/// 5. Days still containing gaps are dropped and the longest run of consecutive
///    complete days is kept (earliest on ties).
/// 6. Negative readings become 0, then values are clipped to
///    `[0, q99.9 + 3 * IQR]` computed over the kept days.
///
/// The result is a fixed point: preprocessing it again returns it unchanged.
pub fn preprocess(raw: &[RawSample]) -> Result<QuarterSeries, DataError> {
    if raw.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let slot_of = |ts: DateTime<Utc>| (ts.timestamp() + STEP_SECONDS / 2).div_euclid(STEP_SECONDS);
    let day_steps = STEPS_PER_DAY as i64;
    let first_slot = raw.iter().map(|s| slot_of(s.timestamp)).min().expect("nonempty");
    let last_slot = raw.iter().map(|s| slot_of(s.timestamp)).max().expect("nonempty");
    let first_day = first_slot.div_euclid(day_steps);
    let days = (last_slot.div_euclid(day_steps) - first_day + 1) as usize;
    let grid_start = first_day * day_steps;
    let total = days * STEPS_PER_DAY;

    let mut sums = vec![0.0; total];
    let mut counts = vec![0u32; total];
    for s in raw {
        if let Some(v) = s.value.filter(|v| v.is_finite()) {
            let i = (slot_of(s.timestamp) - grid_start) as usize;
            sums[i] += v;
            counts[i] += 1;
        }
    }
    let mut values: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / f64::from(c)))
        .collect();
    let invalid = values.iter().filter(|v| v.is_none()).count();
    if 2 * invalid > total {
        return Err(DataError::Quality { invalid, total });
    }

    let mut i = 0;
    while i < total {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let gap_start = i;
        while i < total && values[i].is_none() {
            i += 1;
        }
        let gap_len = i - gap_start;
        if gap_start > 0 && i < total && gap_len <= MAX_INTERPOLATED_GAP {
            let left = values[gap_start - 1].expect("valid neighbour");
            let right = values[i].expect("valid neighbour");
            for (k, slot) in values[gap_start..i].iter_mut().enumerate() {
                let w = (k + 1) as f64 / (gap_len + 1) as f64;
                *slot = Some(left + (right - left) * w);
            }
        }
    }

    let complete: Vec<bool> = values.chunks(STEPS_PER_DAY).map(|d| d.iter().all(Option::is_some)).collect();
    let (mut best_start, mut best_len) = (0, 0);
    let mut run_start = 0;
    for d in 0..=days {
        if d < days && complete[d] {
            continue;
        }
        if d - run_start > best_len {
            best_start = run_start;
            best_len = d - run_start;
        }
        run_start = d + 1;
    }
    if best_len == 0 {
        return Err(DataError::NoCompleteDay);
    }

    let mut kept: Vec<f64> = values[best_start * STEPS_PER_DAY..(best_start + best_len) * STEPS_PER_DAY]
        .iter()
        .map(|v| v.expect("complete day").max(0.0))
        .collect();
    let bound = clip_bound(&kept);
    for v in &mut kept {
        *v = v.min(bound);
    }
    let start_secs = (grid_start + (best_start * STEPS_PER_DAY) as i64) * STEP_SECONDS;
    let start = Utc.timestamp_opt(start_secs, 0).single().expect("valid timestamp");
    Ok(QuarterSeries::new(start, kept, Unit::Kw)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::step_time;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap()
    }

    fn samples(values: &[Option<f64>]) -> Vec<RawSample> {
        values.iter().enumerate().map(|(i, &v)| RawSample::new(step_time(t0(), i), v)).collect()
    }

    fn daily(days: usize) -> Vec<f64> {
        (0..days * 96).map(|i| 1.0 + ((i % 96) as f64 / 10.0).sin().abs()).collect()
    }

    #[test]
    fn clean_input_unchanged() {
        let v = daily(2);
        let out = preprocess(&samples(&v.iter().copied().map(Some).collect::<Vec<_>>())).unwrap();
        assert_eq!(out.start(), t0());
        assert_eq!(out.values(), &v[..]);
    }

    #[test]
    fn single_null_interpolated() {
        let mut v: Vec<Option<f64>> = vec![Some(1.0); 96];
        v[10] = Some(1.0);
        v[11] = None;
        v[12] = Some(2.0);
        let out = preprocess(&samples(&v)).unwrap();
        assert_eq!(out.values()[11], 1.5);
    }

    #[test]
    fn outlier_clipped_to_bound() {
        let mut v: Vec<f64> = (0..14 * 96).map(|i| 0.5 + 7.5 * ((i * 37 % 101) as f64 / 100.0)).collect();
        v[500] = 50.0;
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| sorted[((p * v.len() as f64).ceil() as usize) - 1];
        let bound = q(0.999) + 3.0 * (q(0.75) - q(0.25));
        assert!(q(0.999) <= 8.0);
        let out = preprocess(&samples(&v.iter().copied().map(Some).collect::<Vec<_>>())).unwrap();
        assert_eq!(out.values()[500], bound);
        assert!(bound < 50.0);
    }

    #[test]
    fn misaligned_readings_snap_to_grid() {
        let raw: Vec<RawSample> = (0..96)
            .map(|i| RawSample::new(step_time(t0(), i) + chrono::Duration::seconds(200), Some(i as f64)))
            .collect();
        let out = preprocess(&raw).unwrap();
        assert_eq!(out.start(), t0());
        assert_eq!(out.values()[5], 5.0);
    }

    #[test]
    fn long_gap_drops_day() {
        let mut v: Vec<Option<f64>> = daily(3).into_iter().map(Some).collect();
        for slot in &mut v[96 + 10..96 + 20] {
            *slot = None;
        }
        let out = preprocess(&samples(&v)).unwrap();
        // day 0 and day 2 survive individually; the earliest run wins
        assert_eq!(out.len(), 96);
        assert_eq!(out.start(), t0());
    }

    #[test]
    fn mostly_invalid_is_quality_error() {
        let v: Vec<Option<f64>> = (0..96).map(|i| (i % 3 == 0).then_some(1.0)).collect();
        assert!(matches!(preprocess(&samples(&v)), Err(DataError::Quality { .. })));
        assert!(matches!(preprocess(&[]), Err(DataError::EmptyInput)));
    }

    proptest! {
        #[test]
        fn idempotent_and_valid(
            vals in prop::collection::vec(prop::option::weighted(0.9, -1.0f64..20.0), 96 * 3),
        ) {
            let raw = samples(&vals);
            if let Ok(once) = preprocess(&raw) {
                prop_assert!(once.values().iter().all(|v| v.is_finite() && *v >= 0.0));
                prop_assert_eq!(once.len() % 96, 0);
                let again: Vec<RawSample> = once
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| RawSample::new(once.timestamp(i), Some(v)))
                    .collect();
                prop_assert_eq!(preprocess(&again).unwrap(), once);
            }
        }
    }
}
