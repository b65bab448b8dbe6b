use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{DateTime, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{format_timestamp, CohortManifest, DataError, HouseholdRole, ManifestEntry};
use crate::seed::{derive_seed, rng_for};
use crate::timeseries::{calendar_features, QuarterSeries, Unit, STEPS_PER_DAY};

/// Parameters of one synthetic household.
///
/// Load at a step is `base_load * daily_shape[quarter]`, scaled by
/// `weekend_scale` on Saturdays and Sundays, plus Poisson-timed appliance
/// spikes and Gaussian noise, truncated at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdProfile {
    pub id: String,
    /// kW
    pub base_load: f64,
    pub daily_shape: Vec<f64>,
    pub weekend_scale: f64,
    /// Expected appliance events per day.
    pub spike_rate: f64,
    /// kW
    pub spike_power: f64,
    /// kW
    pub noise_std: f64,
    pub seed: u64,
}

impl HouseholdProfile {
    /// Constant load with no spikes and no noise.
    pub fn flat(id: impl Into<String>, base_load: f64, seed: u64) -> Self {
        Self {
            id: id.into(),
            base_load,
            daily_shape: vec![1.0; STEPS_PER_DAY],
            weekend_scale: 1.0,
            spike_rate: 0.0,
            spike_power: 0.0,
            noise_std: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |reason: &str| {
            Err(DataError::InvalidProfile { id: self.id.clone(), reason: reason.to_string() })
        };
        if self.daily_shape.len() != STEPS_PER_DAY {
            return fail("daily_shape must have 96 entries");
        }
        if self.daily_shape.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail("daily_shape entries must be finite and non-negative");
        }
        let scalars = [self.base_load, self.weekend_scale, self.spike_rate, self.spike_power, self.noise_std];
        if scalars.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail("scalar parameters must be finite and non-negative");
        }
        Ok(())
    }
}

/// Draws `count` profiles from one shared family: a night base, a morning and
/// an evening bump whose timing and height vary per household.
pub fn sample_profiles(count: usize, master_seed: u64, prefix: &str) -> Vec<HouseholdProfile> {
    (0..count)
        .map(|i| {
            let label = format!("gen/{prefix}-{i:02}");
            let mut rng = rng_for(master_seed, &format!("{label}/profile"));
            let morning_hour = rng.random_range(6.5..8.5);
            let morning_height = rng.random_range(0.4..1.0);
            let evening_hour = rng.random_range(17.5..20.5);
            let evening_height = rng.random_range(0.8..1.6);
            let midday = rng.random_range(0.1..0.4);
            let daily_shape = (0..STEPS_PER_DAY)
                .map(|q| {
                    let h = q as f64 / 4.0;
                    let bump = |center: f64, width: f64| (-(h - center).powi(2) / (2.0 * width * width)).exp();
                    0.6 + morning_height * bump(morning_hour, 1.0)
                        + evening_height * bump(evening_hour, 1.5)
                        + midday * bump(13.0, 2.5)
                })
                .collect();
            let base_load = rng.random_range(0.3..0.8);
            HouseholdProfile {
                id: format!("{prefix}-{i:02}"),
                base_load,
                daily_shape,
                weekend_scale: rng.random_range(1.0..1.3),
                spike_rate: rng.random_range(2.0..6.0),
                spike_power: rng.random_range(1.5..3.0),
                noise_std: base_load * rng.random_range(0.05..0.15),
                seed: derive_seed(master_seed, &label),
            }
        })
        .collect()
}

/// Load series for one household; a pure function of its arguments.
pub fn generate_household(profile: &HouseholdProfile, start: DateTime<Utc>, days: usize) -> Result<QuarterSeries, DataError> {
    profile.validate()?;
    if days == 0 {
        return Err(DataError::NoDays);
    }
    let steps = days * STEPS_PER_DAY;
    let calendar = calendar_features(start, steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut values: Vec<f64> = calendar
        .rows
        .iter()
        .map(|row| {
            let weekend = if row.is_weekend == 1 { profile.weekend_scale } else { 1.0 };
            profile.base_load * profile.daily_shape[row.quarter_of_day as usize] * weekend
        })
        .collect();

    if profile.spike_rate > 0.0 && profile.spike_power > 0.0 {
        let events = Poisson::new(profile.spike_rate).expect("positive rate");
        let when = WeightedIndex::new(&profile.daily_shape).ok();
        for day in 0..days {
            let n = events.sample(&mut rng) as usize;
            for _ in 0..n {
                let quarter = match &when {
                    Some(w) => w.sample(&mut rng),
                    None => rng.random_range(0..STEPS_PER_DAY),
                };
                let duration = rng.random_range(1..=4usize);
                let power = profile.spike_power * rng.random_range(0.5..1.5);
                let first = day * STEPS_PER_DAY + quarter;
                for v in values.iter_mut().skip(first).take(duration) {
                    *v += power;
                }
            }
        }
    }
    if profile.noise_std > 0.0 {
        let noise = Normal::new(0.0, profile.noise_std).expect("finite std");
        for v in &mut values {
            *v += noise.sample(&mut rng);
        }
    }
    for v in &mut values {
        *v = v.max(0.0);
    }
    Ok(QuarterSeries::new(start, values, Unit::Kw)?)
}

/// Generates every profile independently (in parallel); the result does not
/// depend on scheduling.
pub fn generate_cohort(
    profiles: &[HouseholdProfile],
    start: DateTime<Utc>,
    days: usize,
) -> Result<BTreeMap<String, QuarterSeries>, DataError> {
    if days == 0 {
        return Err(DataError::NoDays);
    }
    let series: Vec<_> = profiles
        .par_iter()
        .map(|p| generate_household(p, start, days).map(|s| (p.id.clone(), s)))
        .collect::<Result<_, _>>()?;
    Ok(series.into_iter().collect())
}

/// Size and origin of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub pretrain_households: usize,
    pub heldout_households: usize,
    pub days: usize,
    pub start: DateTime<Utc>,
    pub master_seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            pretrain_households: 25,
            heldout_households: 5,
            days: 98,
            start: DateTime::from_timestamp(1_672_617_600, 0).expect("valid timestamp"),
            master_seed: 0,
        }
    }
}

/// Pretraining households `pretrain-NN` and held-out households `heldout-NN`
/// from one master seed, with their manifest.
pub fn synthetic_cohort(spec: &CohortSpec) -> Result<(CohortManifest, BTreeMap<String, QuarterSeries>), DataError> {
    let mut entries = Vec::new();
    let mut profiles = Vec::new();
    for (role, prefix, count) in [
        (HouseholdRole::Pretrain, "pretrain", spec.pretrain_households),
        (HouseholdRole::Heldout, "heldout", spec.heldout_households),
    ] {
        for p in sample_profiles(count, spec.master_seed, prefix) {
            entries.push(ManifestEntry { id: p.id.clone(), file: format!("{}.csv", p.id), role, profile: p.clone() });
            profiles.push(p);
        }
    }
    let cohort = generate_cohort(&profiles, spec.start, spec.days)?;
    let manifest = CohortManifest {
        start: format_timestamp(spec.start),
        days: spec.days,
        master_seed: spec.master_seed,
        households: entries,
    };
    Ok((manifest, cohort))
}

/// Non-positive PV power (kW): a daytime half-sine scaled by a per-day cloud factor.
pub fn synthetic_pv(start: DateTime<Utc>, steps: usize, peak_kw: f64, seed: u64) -> Result<QuarterSeries, DataError> {
    let calendar = calendar_features(start, steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = rng.random_range(0.3..1.0);
    let values = calendar
        .rows
        .iter()
        .map(|row| {
            if row.quarter_of_day == 0 {
                cloud = rng.random_range(0.3..1.0);
            }
            let h = f64::from(row.quarter_of_day) / 4.0;
            if (6.0..20.0).contains(&h) {
                let s = (PI * (h - 6.0) / 14.0).sin().powf(1.5);
                let p = peak_kw * cloud * s;
                if p > 0.0 {
                    -p
                } else {
                    0.0
                }
            } else {
                0.0
            }
        })
        .collect();
    Ok(QuarterSeries::new(start, values, Unit::Kw)?)
}

/// Hourly day-ahead style consumption prices (EUR/kWh) with a morning and an
/// evening peak and a midday dip.
pub fn synthetic_prices(start: DateTime<Utc>, steps: usize, seed: u64) -> Result<QuarterSeries, DataError> {
    let calendar = calendar_features(start, steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.005).expect("finite std");
    let mut level = rng.random_range(0.8..1.2);
    let mut hourly = [0.0; 24];
    let refresh = |level: f64, rng: &mut ChaCha8Rng, hourly: &mut [f64; 24]| {
        for (h, p) in hourly.iter_mut().enumerate() {
            let h = h as f64;
            let shape = 0.10 + 0.08 * (-(h - 8.0).powi(2) / 2.0).exp() + 0.14 * (-(h - 19.0).powi(2) / 3.0).exp()
                - 0.03 * (-(h - 13.0).powi(2) / 4.0).exp();
            *p = (level * shape + noise.sample(rng)).max(0.01);
        }
    };
    refresh(level, &mut rng, &mut hourly);
    let mut values = Vec::with_capacity(steps);
    for (i, row) in calendar.rows.iter().enumerate() {
        if row.quarter_of_day == 0 && i > 0 {
            level = rng.random_range(0.8..1.2);
            refresh(level, &mut rng, &mut hourly);
        }
        values.push(hourly[row.hour_of_day as usize]);
    }
    Ok(QuarterSeries::new(start, values, Unit::EurPerKwh)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap()
    }

    #[test]
    fn cohort_is_reproducible() {
        let profiles = sample_profiles(4, 11, "house");
        let a = generate_cohort(&profiles, start(), 10).unwrap();
        let b = generate_cohort(&profiles, start(), 10).unwrap();
        for (id, s) in &a {
            let bits_a: Vec<u64> = s.values().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b[id].values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn flat_profile_gives_constant_series() {
        let s = generate_household(&HouseholdProfile::flat("flat", 1.0, 3), start(), 3).unwrap();
        assert_eq!(s.len(), 3 * 96);
        assert!(s.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn households_differ_and_stay_nonnegative() {
        let profiles = sample_profiles(3, 5, "house");
        let cohort = generate_cohort(&profiles, start(), 14).unwrap();
        assert_eq!(cohort.len(), 3);
        let series: Vec<_> = cohort.values().collect();
        assert_ne!(series[0].values(), series[1].values());
        assert!(series.iter().all(|s| s.values().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn full_scale_cohort_point_count() {
        let cohort = generate_cohort(&sample_profiles(25, 2, "house"), start(), 450).unwrap();
        assert_eq!(cohort.len(), 25);
        assert!(cohort.values().all(|s| s.len() == 43_200));
        assert_eq!(cohort.values().map(|s| s.len()).sum::<usize>(), 1_080_000);
    }

    #[test]
    fn zero_days_rejected() {
        assert!(matches!(generate_cohort(&sample_profiles(1, 1, "h"), start(), 0), Err(DataError::NoDays)));
    }

    #[test]
    fn bad_shape_rejected() {
        let mut p = HouseholdProfile::flat("x", 1.0, 0);
        p.daily_shape.pop();
        assert!(matches!(generate_household(&p, start(), 1), Err(DataError::InvalidProfile { .. })));
    }

    #[test]
    fn pv_and_prices_have_expected_signs() {
        let pv = synthetic_pv(start(), 96 * 3, 4.0, 1).unwrap();
        assert!(pv.values().iter().all(|&v| v <= 0.0));
        assert!(pv.values().iter().any(|&v| v < -1.0));
        assert_eq!(pv.values()[0], 0.0);
        let prices = synthetic_prices(start(), 96 * 3, 1).unwrap();
        assert!(prices.values().iter().all(|&v| v >= 0.01));
        // evening peak above the night price
        assert!(prices.values()[19 * 4] > prices.values()[3 * 4]);
    }
}
