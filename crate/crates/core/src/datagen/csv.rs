//! `timestamp,value` CSV files and the cohort manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DataError, HouseholdProfile, RawSample};
use crate::timeseries::{check_aligned, QuarterSeries, Unit, STEP_SECONDS};

pub const MANIFEST_FILE: &str = "manifest.json";
const HEADER: &str = "timestamp,value";
const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format(TS_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, TS_FORMAT).ok().map(|n| n.and_utc())
}

fn read_rows(path: &Path) -> Result<Vec<(usize, String, String)>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        Some((_, h)) if h.is_empty() => return Err(DataError::EmptyInput),
        _ => return Err(DataError::Malformed { row: 1, reason: format!("header must be `{HEADER}`") }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        if line.is_empty() {
            continue;
        }
        let (ts, value) = line.split_once(',').ok_or_else(|| DataError::Malformed {
            row,
            reason: "expected two comma-separated fields".into(),
        })?;
        if value.contains(',') {
            return Err(DataError::Malformed { row, reason: "too many fields".into() });
        }
        rows.push((row, ts.to_string(), value.to_string()));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyInput);
    }
    Ok(rows)
}

/// Reads a complete, contiguous, quarter-aligned series.
pub fn read_csv(path: &Path, unit: Unit) -> Result<QuarterSeries, DataError> {
    let rows = read_rows(path)?;
    let mut start = None;
    let mut prev: Option<DateTime<Utc>> = None;
    let mut values = Vec::with_capacity(rows.len());
    for (row, ts_text, value_text) in rows {
        let ts = parse_timestamp(&ts_text)
            .ok_or_else(|| DataError::Malformed { row, reason: format!("bad timestamp `{ts_text}`") })?;
        let value: f64 = value_text
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| DataError::Malformed { row, reason: format!("bad value `{value_text}`") })?;
        if let Some(p) = prev {
            let delta = (ts - p).num_seconds();
            if delta == 0 {
                return Err(DataError::DuplicateTimestamp { row, timestamp: ts_text });
            }
            if delta < 0 {
                return Err(DataError::NonMonotone { row, timestamp: ts_text });
            }
            if delta != STEP_SECONDS {
                return Err(DataError::Gap { row, timestamp: ts_text });
            }
        } else {
            check_aligned(ts).map_err(|_| DataError::Malformed { row, reason: "timestamp not on the quarter-hour grid".into() })?;
            start = Some(ts);
        }
        prev = Some(ts);
        values.push(value);
    }
    Ok(QuarterSeries::new(start.expect("at least one row"), values, unit)?)
}

/// Reads raw readings for [`super::preprocess`]: empty, `null` or `NaN`
/// values are nulls; timestamps may be unaligned, unordered or repeated.
pub fn read_raw_csv(path: &Path) -> Result<Vec<RawSample>, DataError> {
    read_rows(path)?
        .into_iter()
        .map(|(row, ts_text, value_text)| {
            let timestamp = parse_timestamp(&ts_text)
                .or_else(|| DateTime::parse_from_rfc3339(&ts_text).ok().map(|t| t.with_timezone(&Utc)))
                .ok_or_else(|| DataError::Malformed { row, reason: format!("unparseable timestamp `{ts_text}`") })?;
            let value = match value_text.trim() {
                "" | "null" | "NULL" | "NaN" | "nan" => None,
                v => Some(v.parse::<f64>().map_err(|_| DataError::Malformed {
                    row,
                    reason: format!("bad value `{v}`"),
                })?),
            };
            Ok(RawSample::new(timestamp, value))
        })
        .collect()
}

pub fn write_csv(path: &Path, series: &QuarterSeries) -> Result<(), DataError> {
    let mut out = String::with_capacity(32 * (series.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for (i, v) in series.values().iter().enumerate() {
        out.push_str(&format_timestamp(series.timestamp(i)));
        out.push(',');
        out.push_str(&v.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HouseholdRole {
    Pretrain,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub role: HouseholdRole,
    pub profile: HouseholdProfile,
}

/// Provenance record for a generated cohort directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub start: String,
    pub days: usize,
    pub master_seed: u64,
    pub households: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn ids(&self, role: HouseholdRole) -> Vec<String> {
        self.households.iter().filter(|h| h.role == role).map(|h| h.id.clone()).collect()
    }
}

/// Writes one CSV per household plus the manifest.
pub fn write_cohort(
    dir: &Path,
    manifest: &CohortManifest,
    cohort: &BTreeMap<String, QuarterSeries>,
) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for entry in &manifest.households {
        let series = cohort
            .get(&entry.id)
            .ok_or_else(|| DataError::Manifest(format!("no series for household {}", entry.id)))?;
        write_csv(&dir.join(&entry.file), series)?;
    }
    let json = serde_json::to_string_pretty(manifest).map_err(|e| DataError::Manifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json + "\n").map_err(|e| DataError::io(path, e))
}

pub fn read_cohort(dir: &Path) -> Result<(CohortManifest, BTreeMap<String, QuarterSeries>), DataError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
    let manifest: CohortManifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
    let mut cohort = BTreeMap::new();
    for entry in &manifest.households {
        cohort.insert(entry.id.clone(), read_csv(&dir.join(&entry.file), Unit::Kw)?);
    }
    Ok((manifest, cohort))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap()
    }

    #[test]
    fn round_trip_96_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = QuarterSeries::new(t0(), (0..96).map(|i| i as f64 * 0.1 + 1e-17).collect(), Unit::Kw).unwrap();
        write_csv(&path, &s).unwrap();
        assert_eq!(read_csv(&path, Unit::Kw).unwrap(), s);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("timestamp,value\n2023-01-02T00:00:00Z,"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "timestamp,value\n").unwrap();
        assert!(matches!(read_csv(&path, Unit::Kw), Err(DataError::EmptyInput)));
    }

    #[test]
    fn row_errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "timestamp,value\n2023-01-02T00:00:00Z,1\n2023-01-02T00:00:00Z,2\n").unwrap();
        assert!(matches!(read_csv(&path, Unit::Kw), Err(DataError::DuplicateTimestamp { row: 3, .. })));
        fs::write(&path, "timestamp,value\n2023-01-02T00:15:00Z,1\n2023-01-02T00:00:00Z,2\n").unwrap();
        assert!(matches!(read_csv(&path, Unit::Kw), Err(DataError::NonMonotone { row: 3, .. })));
        fs::write(&path, "timestamp,value\n2023-01-02T00:00:00Z,1\n2023-01-02T00:15:00Z,abc\n").unwrap();
        assert!(matches!(read_csv(&path, Unit::Kw), Err(DataError::Malformed { row: 3, .. })));
        fs::write(&path, "timestamp,value\n2023-01-02T00:00:00Z,1\n2023-01-02T00:45:00Z,1\n").unwrap();
        assert!(matches!(read_csv(&path, Unit::Kw), Err(DataError::Gap { row: 3, .. })));
    }

    #[test]
    fn raw_reader_accepts_nulls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        fs::write(&path, "timestamp,value\n2023-01-02T00:07:00Z,\n2023-01-02T00:15:00Z,null\n2023-01-02T00:30:00Z,2.5\n").unwrap();
        let raw = read_raw_csv(&path).unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!(raw[0].value, None);
        assert_eq!(raw[2].value, Some(2.5));
        fs::write(&path, "timestamp,value\nyesterday,1\n").unwrap();
        assert!(matches!(read_raw_csv(&path), Err(DataError::Malformed { row: 2, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_read_is_bitwise(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 1..200)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.csv");
            let s = QuarterSeries::new(t0(), values, Unit::Kw).unwrap();
            write_csv(&path, &s).unwrap();
            let back = read_csv(&path, Unit::Kw).unwrap();
            let a: Vec<u64> = s.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
