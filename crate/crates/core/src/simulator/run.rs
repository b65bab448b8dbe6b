use std::fs;
use std::path::Path;

use chrono::{DateTime, Timelike, Utc};

use super::{DemandForecaster, ReplanMode, SimError, SimulationConfig};
use crate::datagen::format_timestamp;
use crate::mpc::{solve_dispatch, step_cost, DispatchProblem, LpStatus};
use crate::timeseries::{BatteryParams, QuarterSeries, Tariff, Unit, DT_HOURS, STEPS_PER_DAY, STEP_SECONDS};

/// One simulated quarter-hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub timestamp: DateTime<Utc>,
    pub forecast_demand_kw: f64,
    pub actual_demand_kw: f64,
    pub pv_kw: f64,
    pub u_kw: f64,
    pub grid_kw: f64,
    /// State of charge at the end of the step.
    pub energy_kwh: f64,
    pub step_cost_eur: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub records: Vec<StepRecord>,
    pub initial_energy: f64,
    /// Sum of the step costs, EUR.
    pub total_cost: f64,
}

impl SimulationResult {
    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(self.initial_energy, |r| r.energy_kwh)
    }

    /// Largest violation of the battery dynamics, energy bounds or power
    /// bounds along the trajectory, in kWh (power violations scaled by dt).
    pub fn physics_violation(&self, battery: &BatteryParams) -> f64 {
        let mut worst: f64 = 0.0;
        let mut prev = self.initial_energy;
        for r in &self.records {
            let expected = battery.next_energy(prev, r.u_kw, DT_HOURS);
            worst = worst.max((expected - r.energy_kwh).abs());
            worst = worst.max(-r.energy_kwh).max(r.energy_kwh - battery.e_max);
            worst = worst.max((battery.u_min - r.u_kw) * DT_HOURS).max((r.u_kw - battery.u_max) * DT_HOURS);
            prev = r.energy_kwh;
        }
        worst
    }
}

/// Step index of `ts` on the grid that starts at `start`, if it lies on it.
fn step_offset(start: DateTime<Utc>, ts: DateTime<Utc>) -> Option<usize> {
    let secs = (ts - start).num_seconds();
    (secs >= 0 && secs % STEP_SECONDS == 0).then(|| (secs / STEP_SECONDS) as usize)
}

/// The simulated period cut out of the inputs.
struct Period {
    /// Index of the first period step in the demand series.
    offset: usize,
    actual: QuarterSeries,
    pv: QuarterSeries,
    tariff: Tariff,
}

/// The period starts where `pv` starts and runs for `steps` steps.
fn period(demand: &QuarterSeries, pv: &QuarterSeries, tariff: &Tariff, steps: usize) -> Result<Period, SimError> {
    let start = pv.start();
    if tariff.lambda_con.start() != start || tariff.lambda_inj.start() != start {
        return Err(SimError::Config("pv and tariff must start at the same step".into()));
    }
    if pv.len() < steps || tariff.len() < steps || tariff.lambda_inj.len() < steps {
        return Err(SimError::Config(format!("pv and tariff must cover {steps} steps")));
    }
    let offset = step_offset(demand.start(), start)
        .ok_or_else(|| SimError::Config("period starts before the demand series or off its grid".into()))?;
    if offset + steps > demand.len() {
        return Err(SimError::Config(format!(
            "demand ends {} steps into a {steps}-step period",
            demand.len().saturating_sub(offset)
        )));
    }
    Ok(Period {
        offset,
        actual: demand.slice(offset..offset + steps)?,
        pv: pv.slice(0..steps)?,
        tariff: tariff.slice(0..steps)?,
    })
}

/// Optimal schedule for `demand` over the period steps `from..to`.
fn plan(
    p: &Period,
    demand: Vec<f64>,
    from: usize,
    to: usize,
    battery: BatteryParams,
    terminal: Option<f64>,
) -> Result<Vec<f64>, SimError> {
    let demand = QuarterSeries::new(p.pv.timestamp(from), demand, Unit::Kw)?;
    let problem =
        DispatchProblem::new(demand, p.pv.slice(from..to)?, p.tariff.slice(from..to)?, battery)?.with_terminal_energy(terminal);
    let solution = solve_dispatch(&problem)?;
    if solution.status != LpStatus::Optimal {
        return Err(SimError::Solver { step: from, status: solution.status });
    }
    Ok(solution.u)
}

/// Applies `u` to the real battery and meter for period step `k`.
fn apply(p: &Period, k: usize, forecast: f64, u: f64, energy: &mut f64, battery: &BatteryParams) -> StepRecord {
    let u = battery.clamp_action(*energy, u, DT_HOURS);
    *energy = battery.next_energy(*energy, u, DT_HOURS).clamp(0.0, battery.e_max);
    let actual = p.actual.values()[k];
    let pv = p.pv.values()[k];
    let grid = actual + pv + u;
    let cost = step_cost(p.tariff.lambda_con.values()[k], p.tariff.lambda_inj.values()[k], grid, DT_HOURS);
    StepRecord {
        timestamp: p.actual.timestamp(k),
        forecast_demand_kw: forecast,
        actual_demand_kw: actual,
        pv_kw: pv,
        u_kw: u,
        grid_kw: grid,
        energy_kwh: *energy,
        step_cost_eur: cost,
    }
}

fn finish(records: Vec<StepRecord>, initial_energy: f64) -> SimulationResult {
    let total_cost = records.iter().map(|r| r.step_cost_eur).sum();
    SimulationResult { records, initial_energy, total_cost }
}

/// Highest charge reachable from `energy` within `steps` steps.
fn reachable(battery: &BatteryParams, energy: f64, steps: usize) -> f64 {
    (0..steps).fold(energy, |e, _| battery.next_energy(e, battery.u_max, DT_HOURS).min(battery.e_max))
}

/// Closed-loop MPC over `config.days` days starting where `pv` starts (a
/// midnight). Each midnight the forecaster sees actual demand up to that
/// point; the battery follows the LP plan and costs are booked against
/// actual demand.
pub fn simulate_mpc(
    demand: &QuarterSeries,
    pv: &QuarterSeries,
    tariff: &Tariff,
    forecaster: &dyn DemandForecaster,
    config: &SimulationConfig,
) -> Result<SimulationResult, SimError> {
    config.validate()?;
    if pv.start().num_seconds_from_midnight() != 0 {
        return Err(SimError::Config(format!("period must start at midnight, not {}", pv.start())));
    }
    let p = period(demand, pv, tariff, config.days * STEPS_PER_DAY)?;
    let needed = forecaster.history_needed();
    if p.offset < needed {
        return Err(SimError::History { needed, available: p.offset });
    }
    let battery = config.battery;
    let mut energy = battery.e_init;
    let mut records = Vec::with_capacity(config.days * STEPS_PER_DAY);
    for day in 0..config.days {
        let first = day * STEPS_PER_DAY;
        let forecast = forecaster.forecast_day(demand, p.offset + first)?;
        if forecast.len() != STEPS_PER_DAY {
            return Err(SimError::Config(format!("forecaster returned {} values for a day", forecast.len())));
        }
        if let Some(i) = forecast.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(SimError::Config(format!("forecast value {} at step {i} is not a demand", forecast[i])));
        }
        let day_start = energy;
        let mut daily_plan = Vec::new();
        for s in 0..STEPS_PER_DAY {
            let left = STEPS_PER_DAY - s;
            let floor = config.terminal_soc.then(|| day_start.min(reachable(&battery, energy, left)));
            let u = match config.replan {
                ReplanMode::PerStep => {
                    let b = BatteryParams { e_init: energy, ..battery };
                    plan(&p, forecast[s..].to_vec(), first + s, first + STEPS_PER_DAY, b, floor)?[0]
                }
                ReplanMode::Daily => {
                    if s == 0 {
                        let b = BatteryParams { e_init: energy, ..battery };
                        daily_plan = plan(&p, forecast.clone(), first, first + STEPS_PER_DAY, b, floor)?;
                    }
                    daily_plan[s]
                }
            };
            records.push(apply(&p, first + s, forecast[s], u, &mut energy, &battery));
        }
    }
    Ok(finish(records, battery.e_init))
}

/// One LP over the whole period with actual demand known in advance.
pub fn perfect_foresight(
    demand: &QuarterSeries,
    pv: &QuarterSeries,
    tariff: &Tariff,
    config: &SimulationConfig,
) -> Result<SimulationResult, SimError> {
    config.validate()?;
    perfect_foresight_steps(demand, pv, tariff, config, config.days * STEPS_PER_DAY)
}

fn perfect_foresight_steps(
    demand: &QuarterSeries,
    pv: &QuarterSeries,
    tariff: &Tariff,
    config: &SimulationConfig,
    steps: usize,
) -> Result<SimulationResult, SimError> {
    let p = period(demand, pv, tariff, steps)?;
    let battery = config.battery;
    let terminal = config.terminal_soc.then_some(battery.e_init);
    let u = plan(&p, p.actual.values().to_vec(), 0, steps, battery, terminal)?;
    let mut energy = battery.e_init;
    let records = (0..steps).map(|k| apply(&p, k, p.actual.values()[k], u[k], &mut energy, &battery)).collect();
    Ok(finish(records, battery.e_init))
}

/// Cost with the battery idle, EUR.
pub fn no_battery_cost(demand: &QuarterSeries, pv: &QuarterSeries, tariff: &Tariff) -> Result<f64, SimError> {
    demand.ensure_same_grid(pv)?;
    demand.ensure_same_grid(&tariff.lambda_con)?;
    demand.ensure_same_grid(&tariff.lambda_inj)?;
    let (con, inj) = (tariff.lambda_con.values(), tariff.lambda_inj.values());
    Ok((0..demand.len())
        .map(|t| step_cost(con[t], inj[t], demand.values()[t] + pv.values()[t], DT_HOURS))
        .sum())
}

/// `timestamp,forecast_kw,actual_kw,pv_kw,u_kw,grid_kw,energy_kwh,cost_eur`
pub fn write_log_csv(path: &Path, result: &SimulationResult) -> Result<(), SimError> {
    let mut out = String::from("timestamp,forecast_kw,actual_kw,pv_kw,u_kw,grid_kw,energy_kwh,cost_eur\n");
    for r in &result.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            format_timestamp(r.timestamp),
            r.forecast_demand_kw,
            r.actual_demand_kw,
            r.pv_kw,
            r.u_kw,
            r.grid_kw,
            r.energy_kwh,
            r.step_cost_eur
        ));
    }
    fs::write(path, out).map_err(|source| SimError::Io { path: path.to_path_buf(), source })
}
