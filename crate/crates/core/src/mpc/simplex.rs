//! Bounded-variable primal simplex (revised form, dense basis inverse).
//!
//! Phase one minimises the sum of artificial variables, phase two the real
//! objective. Entering variables are priced by largest reduced cost; after a
//! run of degenerate pivots the solver switches to Bland's rule (smallest
//! eligible index enters, smallest index leaves among ratio ties) until the
//! objective strictly improves again, which rules out cycling.

use super::{LinearProgram, MpcError};

/// Primal feasibility tolerance (same unit as the constraint it applies to).
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Reduced-cost tolerance for optimality.
pub const OPTIMALITY_TOL: f64 = 1e-10;
/// Smallest accepted pivot magnitude.
pub const PIVOT_TOL: f64 = 1e-10;

const DEGENERATE_RUN_BEFORE_BLAND: usize = 30;
const REFRESH_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Values of the original variables (meaningful only when optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

enum Outcome {
    Optimal,
    Unbounded,
}

struct Simplex {
    m: usize,
    n_orig: usize,
    columns: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Row of each basic variable, `usize::MAX` when nonbasic.
    position: Vec<usize>,
    /// Row-major `m x m` inverse of the basis matrix.
    binv: Vec<f64>,
    duals: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

fn initial_value(lower: f64, upper: f64) -> f64 {
    if lower.is_finite() {
        lower
    } else if upper.is_finite() {
        upper
    } else {
        0.0
    }
}

impl Simplex {
    fn new(lp: &LinearProgram) -> Self {
        let m = lp.num_constraints();
        let n = lp.num_variables();
        let mut columns: Vec<Vec<(usize, f64)>> = (0..n).map(|j| lp.matrix.column(j).to_vec()).collect();
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        let mut x: Vec<f64> = (0..n).map(|j| initial_value(lower[j], upper[j])).collect();

        let ax = lp.matrix.mul_vec(&x);
        let mut binv = vec![0.0; m * m];
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let residual = lp.rhs[i] - ax[i];
            let sign = if residual < 0.0 { -1.0 } else { 1.0 };
            columns.push(vec![(i, sign)]);
            lower.push(0.0);
            upper.push(f64::INFINITY);
            x.push(residual.abs());
            binv[i * m + i] = sign;
            basis.push(n + i);
        }
        let mut position = vec![usize::MAX; n + m];
        for (row, &var) in basis.iter().enumerate() {
            position[var] = row;
        }
        Self {
            m,
            n_orig: n,
            columns,
            rhs: lp.rhs.clone(),
            lower,
            upper,
            cost: vec![0.0; n + m],
            x,
            basis,
            position,
            binv,
            duals: vec![0.0; m],
            iterations: 0,
            max_iterations: 50 * (n + m) + 10_000,
        }
    }

    fn total(&self) -> usize {
        self.columns.len()
    }

    fn is_basic(&self, j: usize) -> bool {
        self.position[j] != usize::MAX
    }

    fn set_phase(&mut self, phase: Phase, lp: &LinearProgram) {
        let n = self.n_orig;
        match phase {
            Phase::One => {
                self.cost[..n].iter_mut().for_each(|c| *c = 0.0);
                self.cost[n..].iter_mut().for_each(|c| *c = 1.0);
            }
            Phase::Two => {
                self.cost[..n].copy_from_slice(&lp.cost);
                self.cost[n..].iter_mut().for_each(|c| *c = 0.0);
                for j in n..self.total() {
                    self.lower[j] = 0.0;
                    self.upper[j] = 0.0;
                    if !self.is_basic(j) {
                        self.x[j] = 0.0;
                    }
                }
            }
        }
        self.refresh();
    }

    /// `B^-1 a_q`
    fn column_alpha(&self, q: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        for &(i, a) in &self.columns[q] {
            for (r, out) in alpha.iter_mut().enumerate() {
                *out += self.binv[r * m + i] * a;
            }
        }
        alpha
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        self.cost[j] - self.columns[j].iter().map(|&(i, a)| self.duals[i] * a).sum::<f64>()
    }

    /// Recomputes duals and basic values from the current basis inverse.
    fn refresh(&mut self) {
        let m = self.m;
        self.duals.iter_mut().for_each(|y| *y = 0.0);
        for r in 0..m {
            let cb = self.cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (y, b) in self.duals.iter_mut().zip(row) {
                    *y += cb * b;
                }
            }
        }
        let mut residual = self.rhs.clone();
        for j in 0..self.total() {
            if !self.is_basic(j) && self.x[j] != 0.0 {
                for &(i, a) in &self.columns[j] {
                    residual[i] -= a * self.x[j];
                }
            }
        }
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            self.x[self.basis[r]] = row.iter().zip(&residual).map(|(b, v)| b * v).sum();
        }
    }

    /// One step of iterative refinement on the basic values.
    fn refine(&mut self) {
        let mut residual = self.rhs.clone();
        for j in 0..self.total() {
            if self.x[j] != 0.0 {
                for &(i, a) in &self.columns[j] {
                    residual[i] -= a * self.x[j];
                }
            }
        }
        let m = self.m;
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            let delta: f64 = row.iter().zip(&residual).map(|(b, v)| b * v).sum();
            self.x[self.basis[r]] += delta;
        }
    }

    /// Replaces the basic variable of `row` by `entering` and updates the inverse.
    fn pivot(&mut self, row: usize, entering: usize, alpha: &[f64]) {
        let m = self.m;
        let pivot = alpha[row];
        let (before, rest) = self.binv.split_at_mut(row * m);
        let (pivot_row, after) = rest.split_at_mut(m);
        pivot_row.iter_mut().for_each(|v| *v /= pivot);
        for (r, chunk) in before.chunks_exact_mut(m).enumerate() {
            let f = alpha[r];
            if f != 0.0 {
                chunk.iter_mut().zip(pivot_row.iter()).for_each(|(v, p)| *v -= f * p);
            }
        }
        for (k, chunk) in after.chunks_exact_mut(m).enumerate() {
            let f = alpha[row + 1 + k];
            if f != 0.0 {
                chunk.iter_mut().zip(pivot_row.iter()).for_each(|(v, p)| *v -= f * p);
            }
        }
        let leaving = self.basis[row];
        self.position[leaving] = usize::MAX;
        self.position[entering] = row;
        self.basis[row] = entering;
    }

    /// Installs hinted basic columns. Returns false if the hinted basis is not
    /// primal feasible (the caller then starts from the artificial basis).
    fn crash(&mut self, hint: &[(usize, usize)]) -> bool {
        for &(row, var) in hint {
            if self.is_basic(var) || self.basis[row] < self.n_orig {
                continue;
            }
            let alpha = self.column_alpha(var);
            if alpha[row].abs() <= 1e-9 {
                continue;
            }
            let leaving = self.basis[row];
            self.pivot(row, var, &alpha);
            self.x[leaving] = 0.0;
        }
        self.refresh();
        (0..self.m).all(|r| {
            let j = self.basis[r];
            self.x[j] >= self.lower[j] - FEASIBILITY_TOL && self.x[j] <= self.upper[j] + FEASIBILITY_TOL
        })
    }

    fn entering_direction(&self, j: usize, d: f64) -> Option<f64> {
        let (l, u, v) = (self.lower[j], self.upper[j], self.x[j]);
        if l == u {
            return None;
        }
        let at_lower = l.is_finite() && v <= l;
        let at_upper = u.is_finite() && v >= u;
        if d < -OPTIMALITY_TOL && !at_upper {
            Some(1.0)
        } else if d > OPTIMALITY_TOL && !at_lower {
            Some(-1.0)
        } else {
            None
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.total() {
            if self.is_basic(j) {
                continue;
            }
            let d = self.reduced_cost(j);
            if let Some(dir) = self.entering_direction(j, d) {
                if bland {
                    return Some((j, dir, d));
                }
                if best.is_none_or(|(_, _, bd)| d.abs() > bd.abs()) {
                    best = Some((j, dir, d));
                }
            }
        }
        best
    }

    fn run(&mut self) -> Result<Outcome, MpcError> {
        let mut degenerate_run = 0usize;
        let mut since_refresh = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(MpcError::IterationLimit(self.iterations));
            }
            if since_refresh >= REFRESH_EVERY {
                self.refresh();
                since_refresh = 0;
            }
            let bland = degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
            let Some((q, dir, d)) = self.choose_entering(bland) else {
                return Ok(Outcome::Optimal);
            };
            self.iterations += 1;
            since_refresh += 1;
            let alpha = self.column_alpha(q);

            let mut step = f64::INFINITY;
            let mut leave: Option<(usize, f64)> = None;
            if self.lower[q].is_finite() && self.upper[q].is_finite() {
                step = self.upper[q] - self.lower[q];
            }
            for (r, &a) in alpha.iter().enumerate() {
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let j = self.basis[r];
                // basic value changes by -dir * a per unit step
                let rate = -dir * a;
                let (limit, bound) = if rate < 0.0 {
                    if !self.lower[j].is_finite() {
                        continue;
                    }
                    (((self.x[j] - self.lower[j]) / -rate).max(0.0), self.lower[j])
                } else {
                    if !self.upper[j].is_finite() {
                        continue;
                    }
                    (((self.upper[j] - self.x[j]) / rate).max(0.0), self.upper[j])
                };
                let better = match leave {
                    None => limit < step,
                    Some((lr, _)) => {
                        if limit < step - 1e-12 {
                            true
                        } else if limit <= step + 1e-12 {
                            if bland {
                                j < self.basis[lr]
                            } else {
                                a.abs() > alpha[lr].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    step = step.min(limit);
                    leave = Some((r, bound));
                }
            }
            if step.is_infinite() {
                return Ok(Outcome::Unbounded);
            }

            if step <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            for (r, &a) in alpha.iter().enumerate() {
                if a != 0.0 {
                    let j = self.basis[r];
                    self.x[j] -= dir * a * step;
                }
            }
            match leave {
                None => {
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((r, bound)) => {
                    let leaving = self.basis[r];
                    self.x[q] += dir * step;
                    self.pivot(r, q, &alpha);
                    self.x[leaving] = bound;
                    // duals: y += d_q * (new row r of B^-1)
                    let m = self.m;
                    let row = &self.binv[r * m..(r + 1) * m];
                    for (y, b) in self.duals.iter_mut().zip(row) {
                        *y += d * b;
                    }
                }
            }
        }
    }

    fn phase_one_infeasibility(&self) -> f64 {
        self.x[self.n_orig..].iter().sum()
    }

    /// Pivots zero-valued artificial variables out of the basis where possible.
    fn drive_out_artificials(&mut self) {
        let m = self.m;
        for r in 0..m {
            if self.basis[r] < self.n_orig {
                continue;
            }
            let row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n_orig {
                if self.is_basic(j) || self.lower[j] == self.upper[j] {
                    continue;
                }
                let v: f64 = self.columns[j].iter().map(|&(i, a)| row[i] * a).sum();
                if v.abs() > 1e-7 && best.is_none_or(|(_, b)| v.abs() > b.abs()) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                let alpha = self.column_alpha(j);
                let leaving = self.basis[r];
                self.pivot(r, j, &alpha);
                self.x[leaving] = 0.0;
            }
        }
        self.refresh();
    }
}

/// Solves `lp`. Infeasible and unbounded programs are reported through
/// [`LpStatus`]; exceeding the iteration cap is an error.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, MpcError> {
    lp.validate()?;
    let mut s = Simplex::new(lp);
    let feasible_start = !lp.basis_hint.is_empty() && s.crash(&lp.basis_hint);
    if !feasible_start {
        s = Simplex::new(lp);
    }

    let scale = 1.0 + lp.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let needs_phase_one = (s.n_orig..s.total()).any(|j| s.x[j] > 0.0);
    if needs_phase_one {
        s.set_phase(Phase::One, lp);
        s.run()?;
        s.refresh();
        if s.phase_one_infeasibility() > FEASIBILITY_TOL * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: s.x[..s.n_orig].to_vec(),
                objective: f64::NAN,
                iterations: s.iterations,
            });
        }
        s.drive_out_artificials();
    }
    s.set_phase(Phase::Two, lp);
    let outcome = s.run()?;
    s.refresh();
    s.refine();
    let x = s.x[..s.n_orig].to_vec();
    let status = match outcome {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Unbounded => LpStatus::Unbounded,
    };
    let objective = if status == LpStatus::Optimal { lp.objective(&x) } else { f64::NEG_INFINITY };
    Ok(LpSolution { status, x, objective, iterations: s.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_attaining_optimum() {
        let mut lp = LinearProgram::new(0);
        lp.add_variable("x", 0.0, 1.0, -1.0, vec![]);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.x, vec![1.0]);
        assert_eq!(sol.objective, -1.0);
    }

    #[test]
    fn equality_forces_objective() {
        let mut lp = LinearProgram::new(1);
        lp.rhs[0] = 1.0;
        lp.add_variable("x", 0.0, 1.0, 1.0, vec![(0, 1.0)]);
        lp.add_variable("y", 0.0, 1.0, 1.0, vec![(0, 1.0)]);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::new(1);
        lp.rhs[0] = 3.0;
        lp.add_variable("x", 0.0, 1.0, 1.0, vec![(0, 1.0)]);
        lp.add_variable("y", 0.0, 1.0, 1.0, vec![(0, 1.0)]);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::new(1);
        lp.add_variable("x", 0.0, f64::INFINITY, -1.0, vec![(0, 1.0)]);
        lp.add_variable("y", 0.0, f64::INFINITY, 0.0, vec![(0, -1.0)]);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variable_moves_down() {
        // min x + 2y, x free, y in [0, 4], x - y = -3  ->  x = -3, y = 0
        let mut lp = LinearProgram::new(1);
        lp.rhs[0] = -3.0;
        lp.add_variable("x", f64::NEG_INFINITY, f64::INFINITY, 1.0, vec![(0, 1.0)]);
        lp.add_variable("y", 0.0, 4.0, 2.0, vec![(0, -1.0)]);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] + 3.0).abs() < 1e-12 && sol.x[1].abs() < 1e-12);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let mut lp = LinearProgram::new(2);
        lp.rhs = vec![2.0, 4.0];
        lp.add_variable("x", 0.0, 5.0, 1.0, vec![(0, 1.0), (1, 2.0)]);
        lp.add_variable("y", 0.0, 5.0, 3.0, vec![(0, 1.0), (1, 2.0)]);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-12);
        assert!(lp.max_violation(&sol.x) < 1e-12);
    }

    #[test]
    fn malformed_bounds_rejected() {
        let mut lp = LinearProgram::new(0);
        lp.add_variable("x", 1.0, 0.0, 1.0, vec![]);
        assert!(matches!(solve_lp(&lp), Err(MpcError::MalformedLp(_))));
    }
}
