use super::{solve_lp, LinearProgram, LpSolution, LpStatus, MpcError};
use crate::timeseries::{BatteryParams, QuarterSeries, Tariff, DT_HOURS};

/// Variables per step, in this order: charge power, discharge power, grid
/// import, grid export, energy at the end of the step.
pub const VARS_PER_STEP: usize = 5;
const CHARGE: usize = 0;
const DISCHARGE: usize = 1;
const IMPORT: usize = 2;
const EXPORT: usize = 3;
const ENERGY: usize = 4;

/// One instance of the dispatch problem over `demand.len()` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchProblem {
    /// kW, non-negative.
    pub demand: QuarterSeries,
    /// kW, non-positive.
    pub pv: QuarterSeries,
    pub tariff: Tariff,
    pub battery: BatteryParams,
    /// Step length in hours.
    pub dt: f64,
    /// Lower bound on the final state of charge, kWh.
    pub terminal_energy: Option<f64>,
}

impl DispatchProblem {
    pub fn new(demand: QuarterSeries, pv: QuarterSeries, tariff: Tariff, battery: BatteryParams) -> Result<Self, MpcError> {
        let problem = Self { demand, pv, tariff, battery, dt: DT_HOURS, terminal_energy: None };
        problem.validate()?;
        Ok(problem)
    }

    /// Require the final state of charge to be at least the initial one.
    pub fn with_terminal_soc(mut self, on: bool) -> Self {
        self.terminal_energy = on.then_some(self.battery.e_init);
        self
    }

    pub fn with_terminal_energy(mut self, kwh: Option<f64>) -> Self {
        self.terminal_energy = kwh;
        self
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        self.demand.ensure_same_grid(&self.pv)?;
        self.demand.ensure_same_grid(&self.tariff.lambda_con)?;
        self.tariff.lambda_con.ensure_same_grid(&self.tariff.lambda_inj)?;
        self.battery.validate()?;
        if let Some(t) = self.demand.values().iter().position(|&d| d < 0.0) {
            return Err(MpcError::InvalidProblem(format!("demand[{t}] is negative")));
        }
        if let Some(t) = self.pv.values().iter().position(|&p| p > 0.0) {
            return Err(MpcError::InvalidProblem(format!("pv[{t}] is positive; generation is stored as <= 0")));
        }
        if let Some(e) = self.terminal_energy {
            if !(0.0..=self.battery.e_max).contains(&e) {
                return Err(MpcError::InvalidProblem(format!("terminal energy {e} outside [0, e_max]")));
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(MpcError::InvalidProblem("dt must be positive".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.demand.len()
    }

    /// Meter power with the battery idle, kW.
    pub fn net_load(&self, t: usize) -> f64 {
        self.demand.values()[t] + self.pv.values()[t]
    }

    pub fn variable(t: usize, k: usize) -> usize {
        VARS_PER_STEP * t + k
    }
}

/// Cost of one step for meter power `grid_kw`: consumption price when
/// importing, injection price when exporting.
pub fn step_cost(lambda_con: f64, lambda_inj: f64, grid_kw: f64, dt: f64) -> f64 {
    if grid_kw >= 0.0 {
        lambda_con * grid_kw * dt
    } else {
        lambda_inj * grid_kw * dt
    }
}

/// Total cost of battery schedule `u` evaluated directly on the piecewise
/// meter cost, without the LP.
pub fn schedule_cost(problem: &DispatchProblem, u: &[f64]) -> f64 {
    let con = problem.tariff.lambda_con.values();
    let inj = problem.tariff.lambda_inj.values();
    u.iter()
        .enumerate()
        .map(|(t, &ut)| step_cost(con[t], inj[t], problem.net_load(t) + ut, problem.dt))
        .sum()
}

/// Builds the split-variable LP: `5T` variables and `2T` equality rows
/// (row `2t` is the meter balance, row `2t+1` the battery dynamics).
pub fn build_lp(problem: &DispatchProblem) -> Result<LinearProgram, MpcError> {
    problem.validate()?;
    if let Some(step) = problem.tariff.first_inexact_step() {
        return Err(MpcError::InexactTariff {
            step,
            con: problem.tariff.lambda_con.values()[step],
            inj: problem.tariff.lambda_inj.values()[step],
        });
    }
    let b = &problem.battery;
    let dt = problem.dt;
    let horizon = problem.horizon();
    let con = problem.tariff.lambda_con.values();
    let inj = problem.tariff.lambda_inj.values();
    let mut lp = LinearProgram::new(2 * horizon);

    for t in 0..horizon {
        let balance = 2 * t;
        let dynamics = 2 * t + 1;
        lp.rhs[balance] = problem.net_load(t);
        lp.rhs[dynamics] = if t == 0 { b.e_init } else { 0.0 };

        // import - export - charge + discharge = demand + pv
        // E[t+1] - E[t] - eta*dt*charge + dt/eta*discharge = 0
        lp.add_variable(
            format!("u_plus[{t}]"),
            0.0,
            b.u_max,
            0.0,
            vec![(balance, -1.0), (dynamics, -b.eta * dt)],
        );
        lp.add_variable(
            format!("u_minus[{t}]"),
            0.0,
            -b.u_min,
            0.0,
            vec![(balance, 1.0), (dynamics, dt / b.eta)],
        );
        lp.add_variable(format!("p_imp[{t}]"), 0.0, f64::INFINITY, con[t] * dt, vec![(balance, 1.0)]);
        lp.add_variable(format!("p_exp[{t}]"), 0.0, f64::INFINITY, -inj[t] * dt, vec![(balance, -1.0)]);
        let mut energy_entries = vec![(dynamics, 1.0)];
        if t + 1 < horizon {
            energy_entries.push((dynamics + 2, -1.0));
        }
        let lower = match problem.terminal_energy {
            Some(e) if t + 1 == horizon => e,
            _ => 0.0,
        };
        lp.add_variable(format!("E[{}]", t + 1), lower, b.e_max, 0.0, energy_entries);
    }

    // Idle battery: meter variable and state of charge basic in every step.
    // Installed back to front so each basis update touches few rows.
    for t in (0..horizon).rev() {
        let meter = if problem.net_load(t) >= 0.0 { IMPORT } else { EXPORT };
        lp.basis_hint.push((2 * t + 1, DispatchProblem::variable(t, ENERGY)));
        lp.basis_hint.push((2 * t, DispatchProblem::variable(t, meter)));
    }
    Ok(lp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSolution {
    pub status: LpStatus,
    /// Net battery power per step, kW (charging positive).
    pub u: Vec<f64>,
    pub u_charge: Vec<f64>,
    pub u_discharge: Vec<f64>,
    pub grid_import: Vec<f64>,
    pub grid_export: Vec<f64>,
    /// Meter power per step, kW.
    pub grid_power: Vec<f64>,
    /// State of charge at every step boundary, `horizon + 1` entries, kWh.
    pub energy: Vec<f64>,
    /// EUR
    pub cost: f64,
}

impl DispatchSolution {
    fn without_schedule(status: LpStatus) -> Self {
        Self {
            status,
            u: Vec::new(),
            u_charge: Vec::new(),
            u_discharge: Vec::new(),
            grid_import: Vec::new(),
            grid_export: Vec::new(),
            grid_power: Vec::new(),
            energy: Vec::new(),
            cost: f64::NAN,
        }
    }

    /// Cost of each step, EUR.
    pub fn step_costs(&self, problem: &DispatchProblem) -> Vec<f64> {
        let con = problem.tariff.lambda_con.values();
        let inj = problem.tariff.lambda_inj.values();
        self.grid_power.iter().enumerate().map(|(t, &p)| step_cost(con[t], inj[t], p, problem.dt)).collect()
    }
}

/// Maps an optimal LP solution back to a battery schedule and recomputes its
/// cost from the schedule alone; disagreement with the LP objective beyond
/// 1e-9 EUR means the linearisation is broken.
///
/// At price ties the LP may charge and discharge in the same step without
/// changing the cost. Such steps are reduced to a single direction with the
/// same stored energy; this only lowers meter power, so the cost cannot rise.
pub fn extract_dispatch(problem: &DispatchProblem, solution: &LpSolution) -> Result<DispatchSolution, MpcError> {
    if solution.status != LpStatus::Optimal {
        return Err(MpcError::NotOptimal(solution.status));
    }
    let horizon = problem.horizon();
    let eta2 = problem.battery.eta * problem.battery.eta;
    let get = |t: usize, k: usize| solution.x[DispatchProblem::variable(t, k)];
    let mut u_charge = Vec::with_capacity(horizon);
    let mut u_discharge = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (mut c, mut d) = (get(t, CHARGE).max(0.0), get(t, DISCHARGE).max(0.0));
        let shift = c.min(d / eta2);
        if shift > 0.0 {
            c -= shift;
            d = (d - eta2 * shift).max(0.0);
            if c < d {
                c = 0.0;
            } else {
                d = 0.0;
            }
        }
        u_charge.push(c);
        u_discharge.push(d);
    }
    let u: Vec<f64> = u_charge.iter().zip(&u_discharge).map(|(c, d)| c - d).collect();
    let grid_power: Vec<f64> = (0..horizon).map(|t| problem.net_load(t) + u[t]).collect();
    let grid_import = grid_power.iter().map(|p| p.max(0.0)).collect();
    let grid_export = grid_power.iter().map(|p| (-p).max(0.0)).collect();
    let mut energy = Vec::with_capacity(horizon + 1);
    energy.push(problem.battery.e_init);
    for t in 0..horizon {
        let e = problem.battery.next_energy(energy[t], u[t], problem.dt);
        if (e - get(t, ENERGY)).abs() > 1e-8 {
            return Err(MpcError::Inconsistent { lp: get(t, ENERGY), recomputed: e });
        }
        energy.push(e.clamp(0.0, problem.battery.e_max));
    }

    let cost = schedule_cost(problem, &u);
    if (cost - solution.objective).abs() > 1e-9 {
        return Err(MpcError::Inconsistent { lp: solution.objective, recomputed: cost });
    }
    Ok(DispatchSolution {
        status: LpStatus::Optimal,
        u,
        u_charge,
        u_discharge,
        grid_import,
        grid_export,
        grid_power,
        energy,
        cost,
    })
}

/// Build, solve and extract in one call.
pub fn solve_dispatch(problem: &DispatchProblem) -> Result<DispatchSolution, MpcError> {
    let lp = build_lp(problem)?;
    let solution = solve_lp(&lp)?;
    match solution.status {
        LpStatus::Optimal => extract_dispatch(problem, &solution),
        status => Ok(DispatchSolution::without_schedule(status)),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::timeseries::Unit;
    use chrono::{DateTime, TimeZone, Utc};

    pub(crate) fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap()
    }

    pub(crate) fn problem(demand: &[f64], pv: &[f64], con: &[f64], inj: &[f64], battery: BatteryParams) -> DispatchProblem {
        let s = |v: &[f64], unit| QuarterSeries::new(t0(), v.to_vec(), unit).unwrap();
        let tariff = Tariff::new(s(con, Unit::EurPerKwh), s(inj, Unit::EurPerKwh)).unwrap();
        DispatchProblem::new(s(demand, Unit::Kw), s(pv, Unit::Kw), tariff, battery).unwrap()
    }

    pub(crate) fn two_step_instance() -> DispatchProblem {
        problem(&[0.0, 4.0], &[0.0, 0.0], &[0.10, 1.00], &[0.04, 0.40], BatteryParams::default())
    }

    #[test]
    fn structural_counts() {
        let p = problem(&[1.0; 96], &[0.0; 96], &[0.2; 96], &[0.08; 96], BatteryParams::default());
        let lp = build_lp(&p).unwrap();
        assert_eq!(lp.num_variables(), 480);
        assert_eq!(lp.num_constraints(), 192);
    }

    #[test]
    fn inexact_tariff_refused() {
        let mut inj = [0.05; 6];
        inj[3] = 0.5;
        let p = problem(&[1.0; 6], &[0.0; 6], &[0.2; 6], &inj, BatteryParams::default());
        assert!(matches!(build_lp(&p), Err(MpcError::InexactTariff { step: 3, .. })));
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let battery = BatteryParams::new(10.0, -5.0, 5.0, 0.9, 3.0).unwrap();
        let p = problem(&[0.0; 4], &[0.0; 4], &[0.3, 0.1, 0.5, 0.2], &[0.1, 0.04, 0.2, 0.08], battery);
        let lp = build_lp(&p).unwrap();
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        // stored energy has nothing to offset, exporting it earns money
        assert!(sol.objective <= 0.0);
        // round-trip arbitrage 0.81 * max injection < min consumption price
        let idle = problem(&[0.0; 4], &[0.0; 4], &[0.3, 0.1, 0.5, 0.2], &[0.03, 0.01, 0.05, 0.02], BatteryParams::default());
        let d = solve_dispatch(&idle).unwrap();
        assert!(d.cost.abs() < 1e-12);
        assert!(d.u.iter().all(|u| u.abs() < 1e-12));
        let all = solve_lp(&build_lp(&idle).unwrap()).unwrap();
        assert!(all.x.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_step_golden_cost() {
        let d = solve_dispatch(&two_step_instance()).unwrap();
        assert!((d.cost - 0.120).abs() < 1e-6, "cost {}", d.cost);
        assert!((d.u[0] - 5.0).abs() < 1e-9);
        assert!((d.u[1] + 4.05).abs() < 1e-9);
        assert!((d.grid_power[1] + 0.05).abs() < 1e-9);
    }

    #[test]
    fn flat_prices_leave_battery_idle() {
        let demand = [1.0, 3.0, 0.5, 2.0, 4.0, 0.0];
        let p = problem(&demand, &[0.0; 6], &[0.25; 6], &[0.1; 6], BatteryParams::default());
        let d = solve_dispatch(&p).unwrap();
        let idle = schedule_cost(&p, &[0.0; 6]);
        assert!((d.cost - idle).abs() < 1e-12);
    }

    #[test]
    fn terminal_flag_keeps_energy() {
        let battery = BatteryParams::new(10.0, -5.0, 5.0, 0.9, 4.0).unwrap();
        let p = problem(&[3.0; 4], &[0.0; 4], &[0.3; 4], &[0.1; 4], battery);
        let free = solve_dispatch(&p).unwrap();
        assert!(*free.energy.last().unwrap() < 4.0);
        let kept = solve_dispatch(&p.clone().with_terminal_soc(true)).unwrap();
        assert!(*kept.energy.last().unwrap() >= 4.0 - 1e-9);
        assert!(kept.cost >= free.cost);
    }

    #[test]
    fn non_optimal_solution_rejected() {
        let p = two_step_instance();
        let bogus = LpSolution { status: LpStatus::Infeasible, x: vec![], objective: f64::NAN, iterations: 0 };
        assert!(matches!(extract_dispatch(&p, &bogus), Err(MpcError::NotOptimal(LpStatus::Infeasible))));
    }

    #[test]
    fn tampered_objective_is_inconsistent() {
        let p = two_step_instance();
        let mut sol = solve_lp(&build_lp(&p).unwrap()).unwrap();
        sol.objective += 1e-6;
        assert!(matches!(extract_dispatch(&p, &sol), Err(MpcError::Inconsistent { .. })));
    }

    #[test]
    fn week_long_problem_solves() {
        let n = 96 * 7;
        let demand: Vec<f64> = (0..n).map(|i| 0.5 + ((i % 96) as f64 / 15.0).sin().abs() * 2.0).collect();
        let pv: Vec<f64> = (0..n).map(|i| -((i % 96) as f64 / 96.0 * std::f64::consts::PI).sin().max(0.0) * 3.0).collect();
        let con: Vec<f64> = (0..n).map(|i| 0.1 + 0.2 * ((i % 96) as f64 / 30.0).cos().abs()).collect();
        let inj: Vec<f64> = con.iter().map(|c| 0.4 * c).collect();
        let p = problem(&demand, &pv, &con, &inj, BatteryParams::default());
        let d = solve_dispatch(&p).unwrap();
        assert_eq!(d.status, LpStatus::Optimal);
        assert!(d.cost <= schedule_cost(&p, &vec![0.0; n]) + 1e-9);
        assert!(super::super::verify_solution(&p, &d).passed());
    }
}
