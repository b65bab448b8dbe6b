use super::{step_cost, DispatchProblem, MpcError};

pub const MAX_BRUTE_FORCE_STEPS: usize = 8;
/// States whose energy falls in the same bucket (kWh) are merged, keeping the
/// cheaper one.
pub const STATE_BUCKET_KWH: f64 = 5e-4;
const MAX_ACTIONS: usize = 100_001;
const ENERGY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub cost: f64,
    pub u: Vec<f64>,
    /// `horizon + 1` entries, starting at the initial state of charge.
    pub energy: Vec<f64>,
    /// Number of (state, action) pairs evaluated.
    pub transitions: usize,
}

struct Node {
    energy: f64,
    cost: f64,
    parent: usize,
    action: f64,
}

/// Searches every battery schedule on the grid `{k * resolution}` inside the
/// power bounds, dynamic programming over the state of charge.
///
/// Costs are accumulated exactly along each surviving path, so the result is
/// an achievable schedule and an upper bound on the continuous optimum.
pub fn brute_force_dispatch(problem: &DispatchProblem, resolution: f64) -> Result<BruteForceResult, MpcError> {
    problem.validate()?;
    let horizon = problem.horizon();
    if horizon > MAX_BRUTE_FORCE_STEPS {
        return Err(MpcError::TooLarge { steps: horizon, max: MAX_BRUTE_FORCE_STEPS });
    }
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(MpcError::InvalidResolution(resolution));
    }
    let b = &problem.battery;
    let k_min = (b.u_min / resolution - 1e-9).ceil() as i64;
    let k_max = (b.u_max / resolution + 1e-9).floor() as i64;
    if (k_max - k_min + 1) as usize > MAX_ACTIONS {
        return Err(MpcError::InvalidResolution(resolution));
    }
    let actions: Vec<f64> = (k_min..=k_max).map(|k| k as f64 * resolution).collect();
    let con = problem.tariff.lambda_con.values();
    let inj = problem.tariff.lambda_inj.values();
    let buckets = (b.e_max / STATE_BUCKET_KWH).ceil() as usize + 1;

    let mut layers: Vec<Vec<Node>> = vec![vec![Node { energy: b.e_init, cost: 0.0, parent: 0, action: 0.0 }]];
    let mut transitions = 0;
    for t in 0..horizon {
        let net = problem.net_load(t);
        let mut slot: Vec<Option<usize>> = vec![None; buckets];
        let mut next: Vec<Node> = Vec::new();
        for (i, node) in layers[t].iter().enumerate() {
            for &u in &actions {
                transitions += 1;
                let e = b.next_energy(node.energy, u, problem.dt);
                if e < -ENERGY_TOL || e > b.e_max + ENERGY_TOL {
                    continue;
                }
                let cost = node.cost + step_cost(con[t], inj[t], net + u, problem.dt);
                let key = ((e.max(0.0) / STATE_BUCKET_KWH).round() as usize).min(buckets - 1);
                match slot[key] {
                    Some(j) if next[j].cost <= cost => {}
                    Some(j) => next[j] = Node { energy: e, cost, parent: i, action: u },
                    None => {
                        slot[key] = Some(next.len());
                        next.push(Node { energy: e, cost, parent: i, action: u });
                    }
                }
            }
        }
        layers.push(next);
    }

    let last = &layers[horizon];
    let best = last
        .iter()
        .enumerate()
        .filter(|(_, n)| problem.terminal_energy.is_none_or(|e| n.energy >= e - ENERGY_TOL))
        .min_by(|a, c| a.1.cost.total_cmp(&c.1.cost))
        .map(|(i, _)| i)
        .ok_or_else(|| MpcError::InvalidProblem("no schedule on the action grid is feasible".into()))?;

    let mut u = vec![0.0; horizon];
    let mut energy = vec![0.0; horizon + 1];
    let mut idx = best;
    for t in (0..horizon).rev() {
        let node = &layers[t + 1][idx];
        u[t] = node.action;
        energy[t + 1] = node.energy;
        idx = node.parent;
    }
    energy[0] = b.e_init;
    Ok(BruteForceResult { cost: last[best].cost, u, energy, transitions })
}

#[cfg(test)]
mod tests {
    use super::super::dispatch::tests::{problem, two_step_instance};
    use super::super::{schedule_cost, solve_dispatch};
    use super::*;
    use crate::timeseries::BatteryParams;

    #[test]
    fn two_step_matches_lp() {
        let p = two_step_instance();
        let bf = brute_force_dispatch(&p, 0.01).unwrap();
        assert!((bf.cost - 0.120).abs() < 1e-6, "{}", bf.cost);
        assert!((schedule_cost(&p, &bf.u) - bf.cost).abs() < 1e-12);
    }

    #[test]
    fn never_beats_the_lp() {
        let battery = BatteryParams::new(2.0, -1.5, 1.0, 0.85, 0.7).unwrap();
        let p = problem(
            &[0.4, 1.2, 0.0, 2.0, 0.3],
            &[0.0, -0.8, -2.5, 0.0, 0.0],
            &[0.12, 0.30, 0.08, 0.45, 0.20],
            &[0.05, 0.10, 0.02, 0.15, 0.08],
            battery,
        );
        let lp = solve_dispatch(&p).unwrap();
        let bf = brute_force_dispatch(&p, 0.01).unwrap();
        assert!(lp.cost <= bf.cost + 1e-9);
        assert!(bf.cost - lp.cost < 0.01, "lp {} bf {}", lp.cost, bf.cost);
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let p = problem(&[0.0; 4], &[0.0; 4], &[0.2; 4], &[0.08; 4], BatteryParams::default());
        assert_eq!(brute_force_dispatch(&p, 0.5).unwrap().cost, 0.0);
    }

    #[test]
    fn coarse_grid_only_idles() {
        let p = problem(&[1.0, 3.0, 0.5], &[0.0, -2.0, 0.0], &[0.1, 0.5, 0.3], &[0.05, 0.1, 0.1], BatteryParams::default());
        let bf = brute_force_dispatch(&p, 10.5).unwrap();
        assert_eq!(bf.u, vec![0.0; 3]);
        assert!((bf.cost - schedule_cost(&p, &[0.0; 3])).abs() < 1e-15);
    }

    #[test]
    fn flat_prices_idle_is_optimal() {
        let demand = [1.0, 2.5, 0.2, 3.0, 0.7, 1.4];
        let p = problem(&demand, &[0.0; 6], &[0.3; 6], &[0.12; 6], BatteryParams::default());
        let bf = brute_force_dispatch(&p, 0.25).unwrap();
        let idle = schedule_cost(&p, &[0.0; 6]);
        assert!((bf.cost - idle).abs() < 1e-12);
        assert!((solve_dispatch(&p).unwrap().cost - idle).abs() < 1e-12);
    }

    #[test]
    fn limits_enforced() {
        let p = problem(&[1.0; 9], &[0.0; 9], &[0.2; 9], &[0.1; 9], BatteryParams::default());
        assert!(matches!(brute_force_dispatch(&p, 0.1), Err(MpcError::TooLarge { .. })));
        let p = two_step_instance();
        assert!(matches!(brute_force_dispatch(&p, 0.0), Err(MpcError::InvalidResolution(_))));
        assert!(matches!(brute_force_dispatch(&p, 1e-6), Err(MpcError::InvalidResolution(_))));
    }
}
