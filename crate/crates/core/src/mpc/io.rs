//! Dispatch problems and schedules as CSV.

use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};

use super::{DispatchProblem, DispatchSolution, MpcError};
use crate::timeseries::{BatteryParams, QuarterSeries, Tariff, Unit};

const PROBLEM_HEADER: &str = "t,demand_kw,pv_kw,lambda_con,lambda_inj";
const SOLUTION_HEADER: &str = "t,u_kw,grid_kw,energy_kwh,cost_eur";

fn io_err(path: &Path, source: std::io::Error) -> MpcError {
    MpcError::Io { path: path.to_path_buf(), source }
}

pub fn write_problem_csv(path: &Path, problem: &DispatchProblem) -> Result<(), MpcError> {
    let mut out = String::from(PROBLEM_HEADER);
    out.push('\n');
    for t in 0..problem.horizon() {
        out.push_str(&format!(
            "{t},{},{},{},{}\n",
            problem.demand.values()[t],
            problem.pv.values()[t],
            problem.tariff.lambda_con.values()[t],
            problem.tariff.lambda_inj.values()[t],
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a problem written by [`write_problem_csv`]. Step indices must run
/// 0, 1, 2, ...; the grid is anchored at `start`.
pub fn read_problem_csv(path: &Path, start: DateTime<Utc>, battery: BatteryParams) -> Result<DispatchProblem, MpcError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(PROBLEM_HEADER) {
        return Err(MpcError::Csv { row: 1, reason: format!("header must be `{PROBLEM_HEADER}`") });
    }
    let mut columns: [Vec<f64>; 4] = Default::default();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let row = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(MpcError::Csv { row, reason: format!("expected 5 fields, got {}", fields.len()) });
        }
        if fields[0].trim().parse::<usize>().ok() != Some(columns[0].len()) {
            return Err(MpcError::Csv { row, reason: format!("expected step index {}", columns[0].len()) });
        }
        for (col, text) in columns.iter_mut().zip(&fields[1..]) {
            let v: f64 = text
                .trim()
                .parse()
                .map_err(|_| MpcError::Csv { row, reason: format!("bad number `{text}`") })?;
            col.push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(MpcError::Csv { row: 2, reason: "no data rows".into() });
    }
    let [demand, pv, con, inj] = columns;
    let tariff = Tariff::new(
        QuarterSeries::new(start, con, Unit::EurPerKwh)?,
        QuarterSeries::new(start, inj, Unit::EurPerKwh)?,
    )?;
    DispatchProblem::new(
        QuarterSeries::new(start, demand, Unit::Kw)?,
        QuarterSeries::new(start, pv, Unit::Kw)?,
        tariff,
        battery,
    )
}

/// One row per step; `energy_kwh` is the state of charge at the end of the step.
pub fn write_solution_csv(path: &Path, problem: &DispatchProblem, solution: &DispatchSolution) -> Result<(), MpcError> {
    let costs = solution.step_costs(problem);
    let mut out = String::from(SOLUTION_HEADER);
    out.push('\n');
    for t in 0..solution.u.len() {
        out.push_str(&format!(
            "{t},{},{},{},{}\n",
            solution.u[t],
            solution.grid_power[t],
            solution.energy[t + 1],
            costs[t],
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}
