use std::fmt;

use super::{schedule_cost, DispatchProblem, DispatchSolution, LpStatus};

/// Absolute tolerance used by [`verify_solution`]: kW for power, kWh for
/// energy, EUR for cost, kW² for complementarity products.
pub const VERIFY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Shape,
    PowerBounds,
    EnergyBounds,
    Dynamics,
    Balance,
    Terminal,
    Complementarity,
    Cost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub check: Check,
    pub step: usize,
    pub amount: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} violated at step {} by {:.3e}", self.check, self.step, self.amount)
    }
}

/// Independent feasibility and cost audit of a dispatch schedule.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    pub violations: Vec<Violation>,
    /// Steps where complementarity was not checked because equal consumption
    /// and injection prices make simultaneous flows cost-neutral.
    pub tie_steps: Vec<usize>,
    pub max_violation: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn record(&mut self, check: Check, step: usize, amount: f64) {
        if amount > VERIFY_TOL {
            self.max_violation = self.max_violation.max(amount);
            self.violations.push(Violation { check, step, amount });
        }
    }
}

/// Checks power and energy bounds, battery dynamics, meter balance, the
/// optional terminal constraint, complementarity of the split variables and
/// the reported cost against the problem data alone.
///
/// Complementarity of import/export is skipped where the two prices are
/// equal, and of charge/discharge additionally when `eta == 1`.
pub fn verify_solution(problem: &DispatchProblem, solution: &DispatchSolution) -> VerificationReport {
    let mut report = VerificationReport::default();
    let horizon = problem.horizon();
    let b = &problem.battery;
    let dt = problem.dt;
    let lengths = [
        solution.u.len(),
        solution.u_charge.len(),
        solution.u_discharge.len(),
        solution.grid_import.len(),
        solution.grid_export.len(),
        solution.grid_power.len(),
        solution.energy.len().saturating_sub(1),
    ];
    if solution.status != LpStatus::Optimal || lengths.iter().any(|&n| n != horizon) {
        report.violations.push(Violation { check: Check::Shape, step: 0, amount: f64::INFINITY });
        report.max_violation = f64::INFINITY;
        return report;
    }
    let con = problem.tariff.lambda_con.values();
    let inj = problem.tariff.lambda_inj.values();
    report.record(Check::Dynamics, 0, (solution.energy[0] - b.e_init).abs());
    for t in 0..horizon {
        let (c, d, u) = (solution.u_charge[t], solution.u_discharge[t], solution.u[t]);
        report.record(Check::PowerBounds, t, (-c).max(c - b.u_max).max(-d).max(d + b.u_min));
        report.record(Check::PowerBounds, t, (b.u_min - u).max(u - b.u_max));
        report.record(Check::PowerBounds, t, (u - (c - d)).abs());
        let e_next = solution.energy[t + 1];
        report.record(Check::EnergyBounds, t + 1, (-e_next).max(e_next - b.e_max));
        report.record(Check::Dynamics, t, (e_next - b.next_energy(solution.energy[t], u, dt)).abs());
        let grid = problem.net_load(t) + u;
        let (imp, exp) = (solution.grid_import[t], solution.grid_export[t]);
        report.record(Check::Balance, t, (solution.grid_power[t] - grid).abs());
        report.record(Check::Balance, t, (imp - exp - grid).abs().max(-imp).max(-exp));
        if inj[t] < con[t] {
            report.record(Check::Complementarity, t, imp * exp);
            if b.eta < 1.0 {
                report.record(Check::Complementarity, t, c * d);
            }
        } else {
            report.tie_steps.push(t);
        }
    }
    if let Some(e) = problem.terminal_energy {
        report.record(Check::Terminal, horizon, e - solution.energy[horizon]);
    }
    report.record(Check::Cost, 0, (schedule_cost(problem, &solution.u) - solution.cost).abs());
    report
}
