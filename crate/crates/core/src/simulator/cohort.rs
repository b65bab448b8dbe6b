use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    no_battery_cost, perfect_foresight, simulate_mpc, DemandForecaster, ModelForecaster, PersistenceForecaster, SimError,
    SimulationConfig,
};
use crate::datagen::{synthetic_prices, synthetic_pv, SplitSpec};
use crate::forecaster::{
    finetune, init_model, point_forecast_kw, split_windows, train, ModelWeights, SplitWindows, TrainConfig,
};
use crate::seed::derive_seed;
use crate::timeseries::{mae, QuarterSeries, Tariff, Unit, DEFAULT_INJECTION_RATIO, STEPS_PER_DAY, STEP_SECONDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Global model adapted to the household.
    Finetuned,
    /// Same architecture trained from scratch on the household alone.
    Local,
    /// Yesterday's load.
    Persistence,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Finetuned, ModelKind::Local, ModelKind::Persistence];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Finetuned => "finetuned",
            ModelKind::Local => "local",
            ModelKind::Persistence => "persistence",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Closed-loop control evaluation run on the first days of each test segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSetup {
    pub config: SimulationConfig,
    /// Peak of the synthetic PV profile, kW.
    pub pv_peak_kw: f64,
    /// Prices covering the simulated periods; synthetic when absent.
    pub tariff: Option<Tariff>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortProtocol {
    pub sizes: Vec<usize>,
    /// Validation and test lengths; the training length comes from `sizes`.
    pub split: SplitSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub local: TrainConfig,
    /// Steps between consecutive training windows.
    pub window_stride: usize,
    pub control: Option<ControlSetup>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub household: String,
    pub model_kind: ModelKind,
    pub training_days: usize,
    /// Over the whole test segment, median forecasts issued at midnight.
    pub mae_kw: f64,
    pub control: Option<ControlOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutcome {
    pub cost_eur: f64,
    pub no_battery_eur: f64,
    pub perfect_foresight_eur: f64,
}

impl ControlOutcome {
    /// `(no_battery - cost) / no_battery` in percent; undefined unless the
    /// household pays for its energy without a battery.
    pub fn savings_pct(&self) -> Option<f64> {
        (self.no_battery_eur > 0.0).then(|| 100.0 * (self.no_battery_eur - self.cost_eur) / self.no_battery_eur)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub household: String,
    pub training_days: usize,
    pub error: String,
}

/// Mean and population standard deviation (divides by n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(Stat { n, mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSummary {
    pub model_kind: ModelKind,
    pub training_days: usize,
    pub mae_kw: Stat,
    pub cost_eur: Option<Stat>,
    pub savings_pct: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortReport {
    /// Household-id order, then training size, then model kind.
    pub rows: Vec<CohortRow>,
    pub failures: Vec<CellFailure>,
}

impl CohortReport {
    pub fn summaries(&self) -> Vec<CohortSummary> {
        let mut groups: BTreeMap<(usize, ModelKind), Vec<&CohortRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.training_days, r.model_kind)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((training_days, model_kind), rows)| {
                let maes: Vec<f64> = rows.iter().map(|r| r.mae_kw).collect();
                let costs: Vec<f64> = rows.iter().filter_map(|r| r.control.map(|c| c.cost_eur)).collect();
                let savings: Vec<f64> = rows.iter().filter_map(|r| r.control.and_then(|c| c.savings_pct())).collect();
                CohortSummary {
                    model_kind,
                    training_days,
                    mae_kw: Stat::of(&maes).expect("group has rows"),
                    cost_eur: Stat::of(&costs),
                    savings_pct: Stat::of(&savings),
                }
            })
            .collect()
    }

    pub fn summary(&self, kind: ModelKind, training_days: usize) -> Option<CohortSummary> {
        self.summaries().into_iter().find(|s| s.model_kind == kind && s.training_days == training_days)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `household,model_kind,training_days,mae_kw,cost_eur,no_battery_eur,perfect_foresight_eur,savings_pct`;
/// control columns are empty when no control run was made.
pub fn write_report_csv(path: &Path, report: &CohortReport) -> Result<(), SimError> {
    let mut out =
        String::from("household,model_kind,training_days,mae_kw,cost_eur,no_battery_eur,perfect_foresight_eur,savings_pct\n");
    for r in &report.rows {
        let c = r.control;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.household,
            r.model_kind,
            r.training_days,
            r.mae_kw,
            opt(c.map(|c| c.cost_eur)),
            opt(c.map(|c| c.no_battery_eur)),
            opt(c.map(|c| c.perfect_foresight_eur)),
            opt(c.and_then(|c| c.savings_pct())),
        ));
    }
    fs::write(path, out).map_err(|source| SimError::Io { path: path.to_path_buf(), source })
}

/// Test-segment MAE of median forecasts, one per test day, concatenated.
pub fn test_mae(weights: &ModelWeights, w: &SplitWindows) -> Result<f64, SimError> {
    let mut values = Vec::with_capacity(w.test_actual.len());
    for sample in &w.test {
        values.extend(point_forecast_kw(weights, sample, &w.scaler, 0.5)?);
    }
    let forecast = QuarterSeries::new(w.test_actual.start(), values, Unit::Kw)?;
    Ok(mae(&forecast, &w.test_actual)?)
}

/// Persistence MAE over the test segment of `series` starting at `first_day`.
fn persistence_mae(series: &QuarterSeries, first_day: usize, days: usize) -> Result<f64, SimError> {
    let from = first_day * STEPS_PER_DAY;
    let to = from + days * STEPS_PER_DAY;
    if from < STEPS_PER_DAY {
        return Err(SimError::History { needed: STEPS_PER_DAY, available: from });
    }
    let forecast = series.slice(from - STEPS_PER_DAY..to - STEPS_PER_DAY)?.values().to_vec();
    let forecast = QuarterSeries::new(series.timestamp(from), forecast, series.unit())?;
    Ok(mae(&forecast, &series.slice(from..to)?)?)
}

/// PV and tariff for a control period of `steps` steps starting at step `from`
/// of `series`. PV is drawn per household from `seed`; prices are sliced from
/// `setup.tariff` or drawn from `seed`.
pub fn control_inputs(
    setup: &ControlSetup,
    series: &QuarterSeries,
    household: &str,
    from: usize,
    steps: usize,
    seed: u64,
) -> Result<(QuarterSeries, Tariff), SimError> {
    let start = series.timestamp(from);
    let pv = synthetic_pv(start, steps, setup.pv_peak_kw, derive_seed(seed, &format!("pv/{household}")))?;
    let tariff = match &setup.tariff {
        Some(t) => {
            let secs = (start - t.lambda_con.start()).num_seconds();
            if secs < 0 || secs % STEP_SECONDS != 0 {
                return Err(SimError::Config(format!("tariff does not cover the control period starting {start}")));
            }
            let at = (secs / STEP_SECONDS) as usize;
            if at + steps > t.len() {
                return Err(SimError::Config(format!("tariff does not cover the control period starting {start}")));
            }
            t.slice(at..at + steps)?
        }
        None => Tariff::from_consumption(synthetic_prices(start, steps, derive_seed(seed, "prices"))?, DEFAULT_INJECTION_RATIO)?,
    };
    Ok((pv, tariff))
}

fn evaluate_cell(
    household: &str,
    series: &QuarterSeries,
    global: &ModelWeights,
    protocol: &CohortProtocol,
    training_days: usize,
) -> Result<Vec<CohortRow>, SimError> {
    let config = &global.config;
    let spec = SplitSpec { training_days, ..protocol.split };
    let w = split_windows(series, &spec, config, protocol.window_stride)?;
    let cell = format!("{household}/{training_days}");

    let finetune_cfg = TrainConfig { seed: derive_seed(protocol.seed, &format!("finetune/{cell}")), ..protocol.finetune.clone() };
    let (tuned, _) = finetune(global, &w.train, &w.val, &finetune_cfg, &protocol.pretrain)?;
    let scratch = init_model(config, derive_seed(protocol.seed, &format!("local-init/{cell}")))?;
    let local_cfg = TrainConfig { seed: derive_seed(protocol.seed, &format!("local/{cell}")), ..protocol.local.clone() };
    let (local, _) = train(&scratch, &w.train, &w.val, &local_cfg)?;

    let control = match &protocol.control {
        Some(setup) => {
            let steps = setup.config.days * STEPS_PER_DAY;
            let from = w.test_first_day * STEPS_PER_DAY;
            if setup.config.days > spec.test_days() {
                return Err(SimError::Config("control period is longer than the test segment".into()));
            }
            let (pv, tariff) = control_inputs(setup, series, household, from, steps, protocol.seed)?;
            let actual = series.slice(from..from + steps)?;
            Some((
                pv.clone(),
                tariff.clone(),
                no_battery_cost(&actual, &pv, &tariff)?,
                perfect_foresight(series, &pv, &tariff, &setup.config)?.total_cost,
            ))
        }
        None => None,
    };
    let run = |f: &dyn DemandForecaster| -> Result<Option<ControlOutcome>, SimError> {
        let (Some(setup), Some((pv, tariff, idle, best))) = (&protocol.control, &control) else { return Ok(None) };
        let result = simulate_mpc(series, pv, tariff, f, &setup.config)?;
        Ok(Some(ControlOutcome { cost_eur: result.total_cost, no_battery_eur: *idle, perfect_foresight_eur: *best }))
    };
    let quantile = protocol.control.as_ref().map_or(0.5, |s| s.config.point_quantile);

    let mut rows = Vec::with_capacity(3);
    for (kind, weights) in [(ModelKind::Finetuned, &tuned), (ModelKind::Local, &local)] {
        let forecaster = ModelForecaster { weights, scaler: w.scaler, quantile };
        rows.push(CohortRow {
            household: household.to_string(),
            model_kind: kind,
            training_days,
            mae_kw: test_mae(weights, &w)?,
            control: run(&forecaster)?,
        });
    }
    rows.push(CohortRow {
        household: household.to_string(),
        model_kind: ModelKind::Persistence,
        training_days,
        mae_kw: persistence_mae(series, w.test_first_day, spec.test_days())?,
        control: run(&PersistenceForecaster)?,
    });
    Ok(rows)
}

/// Finetuned, local and persistence forecasters for every household and
/// training size. A failing cell is recorded and the rest of the cohort
/// still runs.
pub fn evaluate_cohort(
    households: &BTreeMap<String, QuarterSeries>,
    global: &ModelWeights,
    protocol: &CohortProtocol,
) -> Result<CohortReport, SimError> {
    if protocol.sizes.is_empty() {
        return Err(SimError::Config("no training sizes given".into()));
    }
    if let Some(setup) = &protocol.control {
        setup.config.validate()?;
    }
    let cells: Vec<(&String, &QuarterSeries, usize)> = households
        .iter()
        .flat_map(|(id, s)| protocol.sizes.iter().map(move |&d| (id, s, d)))
        .collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(id, s, days)| (id, days, evaluate_cell(id, s, global, protocol, days)))
        .collect();
    let mut report = CohortReport::default();
    for (id, days, result) in results {
        match result {
            Ok(rows) => report.rows.extend(rows),
            Err(e) => report.failures.push(CellFailure { household: id.clone(), training_days: days, error: e.to_string() }),
        }
    }
    Ok(report)
}
