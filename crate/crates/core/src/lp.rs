//! Occupancy-measure LP for the constrained MDP, its tightened variant, policy
//! extraction, and a brute-force oracle for small instances.

use serde::{Deserialize, Serialize};

use crate::cmdp::{policy_eval, policy_value, CmdpSpec, PolicyTable};
use crate::error::{Error, Result};
use crate::simplex::{self, LinearProgram, LpOutcome, RowKind, SimplexOptions};

/// Feasibility-check tolerance for returned occupancy measures.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Mass below which a state is treated as unreachable at a step.
pub const ZERO_MASS: f64 = 1e-12;
/// Largest number of deterministic policies [`brute_force_optimal`] enumerates.
pub const ENUMERATION_LIMIT: usize = 4096;

/// `q_h(x, a)`, the probability of visiting `(x, a)` at step `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// `[h][x][a]`
    pub q: Vec<f64>,
}

impl OccupancyMeasure {
    #[inline]
    pub fn at(&self, h: usize, x: usize, a: usize) -> f64 {
        self.q[(h * self.num_states + x) * self.num_actions + a]
    }

    pub fn state_mass(&self, h: usize, x: usize) -> f64 {
        let start = (h * self.num_states + x) * self.num_actions;
        self.q[start..start + self.num_actions].iter().sum()
    }

    /// `sum q r`
    pub fn reward_value(&self, spec: &CmdpSpec) -> f64 {
        self.q.iter().zip(spec.rewards()).map(|(q, r)| q * r).sum()
    }

    /// `sum q g`
    pub fn utility_value(&self, spec: &CmdpSpec) -> f64 {
        self.q
            .iter()
            .zip(spec.utilities())
            .map(|(q, g)| q * g)
            .sum()
    }

    /// Largest violation of non-negativity, normalization, the initial
    /// condition and flow balance.
    pub fn max_residual(&self, spec: &CmdpSpec) -> f64 {
        let (s_n, a_n, h_n) = (spec.num_states(), spec.num_actions(), spec.horizon());
        let mut worst = self.q.iter().fold(0.0f64, |w, &q| w.max(-q));
        for h in 0..h_n {
            let total: f64 = (0..s_n).map(|x| self.state_mass(h, x)).sum();
            worst = worst.max((total - 1.0).abs());
        }
        for x in 0..s_n {
            worst = worst.max((self.state_mass(0, x) - spec.initial_dist()[x]).abs());
        }
        for h in 1..h_n {
            let mut inflow = vec![0.0; s_n];
            for xp in 0..s_n {
                for ap in 0..a_n {
                    let q = self.at(h - 1, xp, ap);
                    if q == 0.0 {
                        continue;
                    }
                    for (y, p) in spec.next_dist(h - 1, xp, ap).iter().enumerate() {
                        inflow[y] += p * q;
                    }
                }
            }
            for (x, inflow) in inflow.iter().enumerate() {
                worst = worst.max((self.state_mass(h, x) - inflow).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub epsilon: f64,
    /// `sum q r`; absent when infeasible.
    pub objective: Option<f64>,
    /// `sum q g`; absent when infeasible.
    pub utility_value: Option<f64>,
    pub occupancy: Option<OccupancyMeasure>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    fn infeasible(epsilon: f64) -> Self {
        LpSolution {
            status: LpStatus::Infeasible,
            epsilon,
            objective: None,
            utility_value: None,
            occupancy: None,
        }
    }
}

/// Deterministic policy maximizing a weighted objective `r + weight * g` by
/// backward induction (ties to the lowest action).
pub fn greedy_dp_policy(spec: &CmdpSpec, reward_weight: f64, utility_weight: f64) -> PolicyTable {
    let (s_n, a_n, h_n) = (spec.num_states(), spec.num_actions(), spec.horizon());
    let mut v_next = vec![0.0; s_n];
    let mut actions = vec![0; h_n * s_n];
    for h in (0..h_n).rev() {
        let mut v = vec![0.0; s_n];
        for x in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..a_n {
                let ev: f64 = spec
                    .next_dist(h, x, a)
                    .iter()
                    .zip(&v_next)
                    .map(|(p, v)| p * v)
                    .sum();
                let val = reward_weight * spec.reward(h, x, a)
                    + utility_weight * spec.utility(h, x, a)
                    + ev;
                if val > best {
                    best = val;
                    actions[h * s_n + x] = a;
                }
            }
            v[x] = best;
        }
        v_next = v;
    }
    PolicyTable::Deterministic {
        horizon: h_n,
        num_states: s_n,
        num_actions: a_n,
        actions,
    }
}

/// Largest achievable expected utility `max_pi W_1^pi` under `mu0`.
pub fn max_utility(spec: &CmdpSpec) -> f64 {
    let pi = greedy_dp_policy(spec, 0.0, 1.0);
    policy_value(spec, &pi).expect("shape matches").1
}

/// Slater slack `delta = max_pi W_1^pi - rho`.
pub fn slater_slack(spec: &CmdpSpec) -> f64 {
    max_utility(spec) - spec.rho()
}

/// Occupancy measure induced by `policy` from `mu0` (forward pass).
pub fn occupancy_of_policy(spec: &CmdpSpec, policy: &PolicyTable) -> OccupancyMeasure {
    let (s_n, a_n, h_n) = (spec.num_states(), spec.num_actions(), spec.horizon());
    let mut q = vec![0.0; h_n * s_n * a_n];
    let mut mass = spec.initial_dist().to_vec();
    for h in 0..h_n {
        let mut next = vec![0.0; s_n];
        for x in 0..s_n {
            if mass[x] == 0.0 {
                continue;
            }
            for a in 0..a_n {
                let qa = mass[x] * policy.prob(h, x, a);
                if qa == 0.0 {
                    continue;
                }
                q[spec.sa_index(h, x, a)] = qa;
                for (y, p) in spec.next_dist(h, x, a).iter().enumerate() {
                    next[y] += p * qa;
                }
            }
        }
        mass = next;
    }
    OccupancyMeasure {
        horizon: h_n,
        num_states: s_n,
        num_actions: a_n,
        q,
    }
}

/// Build the occupancy LP with utility threshold `rho + epsilon`.
///
/// Row `h*S + x` is the initial condition (`h = 0`) or flow balance into `x`
/// at step `h`; the last row is the utility constraint written as
/// `-sum q g <= -(rho + epsilon)`. Normalization rows are implied by the
/// others and omitted.
pub fn build_lp(spec: &CmdpSpec, epsilon: f64) -> LinearProgram {
    let (s_n, a_n, h_n) = (spec.num_states(), spec.num_actions(), spec.horizon());
    let mut lp = LinearProgram::new(spec.table_len(), spec.rewards().to_vec());
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); h_n * s_n];
    for h in 0..h_n {
        for x in 0..s_n {
            for a in 0..a_n {
                let j = spec.sa_index(h, x, a);
                rows[h * s_n + x].push((j, 1.0));
                if h + 1 < h_n {
                    for (y, &p) in spec.next_dist(h, x, a).iter().enumerate() {
                        if p != 0.0 {
                            rows[(h + 1) * s_n + y].push((j, -p));
                        }
                    }
                }
            }
        }
    }
    for (i, coeffs) in rows.into_iter().enumerate() {
        let rhs = if i < s_n { spec.initial_dist()[i] } else { 0.0 };
        lp.add_row(coeffs, RowKind::Eq, rhs);
    }
    let util: Vec<(usize, f64)> = spec
        .utilities()
        .iter()
        .enumerate()
        .filter(|(_, g)| **g != 0.0)
        .map(|(j, g)| (j, -g))
        .collect();
    lp.add_row(util, RowKind::Le, -(spec.rho() + epsilon));
    lp
}

/// Solve the (tightened) occupancy LP. `epsilon = 0` gives the original LP.
pub fn solve_cmdp_lp(spec: &CmdpSpec, epsilon: f64) -> Result<LpSolution> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    solve_with_target(spec, epsilon)
}

/// Solve the LP for an arbitrary utility threshold, which may lie outside
/// `[0, H]` (anything above `H` is infeasible). The reported `epsilon` is
/// `threshold - rho`.
pub fn solve_lp_threshold(spec: &CmdpSpec, threshold: f64) -> Result<LpSolution> {
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "threshold must be finite, got {threshold}"
        )));
    }
    solve_with_target(spec, threshold - spec.rho())
}

fn solve_with_target(spec: &CmdpSpec, epsilon: f64) -> Result<LpSolution> {
    let target = spec.rho() + epsilon;

    // The utility-maximizing deterministic policy certifies (in)feasibility
    // and, when feasible, its occupancy is a basic feasible solution.
    let start = greedy_dp_policy(spec, 0.0, 1.0);
    let w_max = policy_value(spec, &start)?.1;
    if w_max < target - 1e-9 {
        return Ok(LpSolution::infeasible(epsilon));
    }

    let lp = build_lp(spec, epsilon);
    let hint = match &start {
        PolicyTable::Deterministic {
            num_states,
            actions,
            ..
        } => actions
            .iter()
            .enumerate()
            .map(|(i, &a)| (i, spec.sa_index(i / num_states, i % num_states, a)))
            .collect::<Vec<_>>(),
        PolicyTable::Stochastic { .. } => unreachable!(),
    };
    let outcome = simplex::solve(&lp, Some(&hint), &SimplexOptions::default())?;
    match outcome {
        LpOutcome::Infeasible => Ok(LpSolution::infeasible(epsilon)),
        LpOutcome::Unbounded => Err(Error::Numerical("occupancy LP reported unbounded".into())),
        LpOutcome::Optimal { x, objective } => {
            let occ = OccupancyMeasure {
                horizon: spec.horizon(),
                num_states: spec.num_states(),
                num_actions: spec.num_actions(),
                q: x,
            };
            let utility = occ.utility_value(spec);
            Ok(LpSolution {
                status: LpStatus::Optimal,
                epsilon,
                objective: Some(objective),
                utility_value: Some(utility),
                occupancy: Some(occ),
            })
        }
    }
}

/// `pi_h(a|x) = q_h(x,a) / sum_a' q_h(x,a')`, uniform where the state mass is
/// below [`ZERO_MASS`].
pub fn occupancy_to_policy(q: &OccupancyMeasure) -> PolicyTable {
    let (h_n, s_n, a_n) = (q.horizon, q.num_states, q.num_actions);
    let mut probs = vec![0.0; h_n * s_n * a_n];
    for h in 0..h_n {
        for x in 0..s_n {
            let start = (h * s_n + x) * a_n;
            let row = &q.q[start..start + a_n];
            let clipped: Vec<f64> = row.iter().map(|v| v.max(0.0)).collect();
            let mass: f64 = clipped.iter().sum();
            let out = &mut probs[start..start + a_n];
            if mass < ZERO_MASS {
                out.fill(1.0 / a_n as f64);
            } else {
                for (o, v) in out.iter_mut().zip(&clipped) {
                    *o = v / mass;
                }
            }
        }
    }
    PolicyTable::Stochastic {
        horizon: h_n,
        num_states: s_n,
        num_actions: a_n,
        probs,
    }
}

/// Exact value tables of the optimal tightened-LP policy, or an error when
/// the tightened LP is infeasible.
pub fn optimal_policy(spec: &CmdpSpec, epsilon: f64) -> Result<(LpSolution, PolicyTable)> {
    let sol = solve_cmdp_lp(spec, epsilon)?;
    let Some(occ) = &sol.occupancy else {
        return Err(Error::Infeasible(epsilon));
    };
    let pi = occupancy_to_policy(occ);
    Ok((sol, pi))
}

/// Enumerate every deterministic policy `(h, x) -> a` in mixed-radix order.
pub fn deterministic_policies(spec: &CmdpSpec) -> Result<Vec<PolicyTable>> {
    let (s_n, a_n, h_n) = (spec.num_states(), spec.num_actions(), spec.horizon());
    let cells = h_n * s_n;
    let count = (a_n as f64).powi(cells as i32);
    if count > ENUMERATION_LIMIT as f64 {
        return Err(Error::EnumerationGuard {
            policies: count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let count = count as usize;
    let mut out = Vec::with_capacity(count);
    let mut actions = vec![0usize; cells];
    for _ in 0..count {
        out.push(PolicyTable::deterministic(h_n, s_n, a_n, actions.clone())?);
        for slot in actions.iter_mut() {
            *slot += 1;
            if *slot < a_n {
                break;
            }
            *slot = 0;
        }
    }
    Ok(out)
}

/// Optimal constrained value by enumeration: every deterministic policy gives
/// a point `(W, V)`; the answer is the largest `V` over convex combinations of
/// those points whose `W` reaches `rho + epsilon`. `Ok(None)` means
/// infeasible.
pub fn brute_force_optimal(spec: &CmdpSpec, epsilon: f64) -> Result<Option<f64>> {
    let target = spec.rho() + epsilon;
    let mut points = Vec::new();
    for pi in deterministic_policies(spec)? {
        let vt = policy_eval(spec, &pi)?;
        points.push(crate::cmdp::expected_initial_value(spec, &vt));
    }
    Ok(best_mixture(&points, target))
}

/// Maximum `V` over the convex hull of `(V, W)` points subject to `W >= target`.
pub(crate) fn best_mixture(points: &[(f64, f64)], target: f64) -> Option<f64> {
    const TOL: f64 = 1e-12;
    let (above, below): (Vec<_>, Vec<_>) = points.iter().partition(|(_, w)| *w >= target - TOL);
    let mut best = above
        .iter()
        .map(|(v, _)| *v)
        .fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.max(v))))?;
    // A mixture that lands exactly on the threshold pairs one point above it
    // with one below.
    for &(vp, wp) in &above {
        for &(vq, wq) in &below {
            let lambda = (target - wq) / (wp - wq);
            if (0.0..=1.0).contains(&lambda) {
                best = best.max(lambda * vp + (1.0 - lambda) * vq);
            }
        }
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain_cmdp, random_cmdp};

    #[test]
    fn chain_lp_values() {
        let spec = chain_cmdp();
        let sol = solve_cmdp_lp(&spec, 0.0).unwrap();
        assert!((sol.objective.unwrap() - 0.5).abs() < 1e-8);
        let occ = sol.occupancy.unwrap();
        assert!((occ.at(0, 0, 0) - 0.5).abs() < 1e-8);
        assert!((occ.at(0, 0, 1) - 0.5).abs() < 1e-8);

        let tight = solve_cmdp_lp(&spec, 0.1).unwrap();
        assert!((tight.objective.unwrap() - 0.4).abs() < 1e-8);
        assert!(tight.utility_value.unwrap() >= 0.6 - 1e-8);

        let inf = solve_cmdp_lp(&spec.with_rho(1.0).unwrap(), 0.5).unwrap();
        assert_eq!(inf.status, LpStatus::Infeasible);
        assert!(inf.objective.is_none());
    }

    #[test]
    fn chain_brute_force() {
        let spec = chain_cmdp();
        assert_eq!(brute_force_optimal(&spec, 0.0).unwrap(), Some(0.5));
        let tight = brute_force_optimal(&spec, 0.1).unwrap().unwrap();
        assert!((tight - 0.4).abs() < 1e-15);
        assert_eq!(
            brute_force_optimal(&spec.with_rho(0.0).unwrap(), 0.0).unwrap(),
            Some(1.0)
        );
        assert_eq!(
            brute_force_optimal(&spec.with_rho(1.0).unwrap(), 0.5).unwrap(),
            None
        );
    }

    #[test]
    fn threshold_above_horizon_is_infeasible() {
        let spec = chain_cmdp();
        let sol = solve_lp_threshold(&spec, 1.5).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        let ok = solve_lp_threshold(&spec, 0.7).unwrap();
        assert!((ok.objective.unwrap() - 0.3).abs() < 1e-8);
    }

    #[test]
    fn rejects_negative_epsilon() {
        assert!(solve_cmdp_lp(&chain_cmdp(), -0.1).is_err());
    }

    #[test]
    fn policy_extraction() {
        let occ = OccupancyMeasure {
            horizon: 1,
            num_states: 2,
            num_actions: 2,
            q: vec![0.25, 0.75, 0.0, 0.0],
        };
        let pi = occupancy_to_policy(&occ);
        assert_eq!(pi.prob(0, 0, 0), 0.25);
        assert_eq!(pi.prob(0, 0, 1), 0.75);
        assert_eq!(pi.prob(0, 1, 0), 0.5);
        assert_eq!(pi.prob(0, 1, 1), 0.5);
    }

    #[test]
    fn enumeration_guard() {
        let spec = random_cmdp(4, 2, 4, 1);
        assert!(matches!(
            brute_force_optimal(&spec, 0.0),
            Err(Error::EnumerationGuard { .. })
        ));
    }

    #[test]
    fn seed11_lp_round_trip() {
        let spec = random_cmdp(2, 2, 3, 11);
        let (sol, pi) = optimal_policy(&spec, 0.0).unwrap();
        let occ = sol.occupancy.as_ref().unwrap();
        assert!(occ.max_residual(&spec) < FEASIBILITY_TOL);
        let (v, w) = policy_value(&spec, &pi).unwrap();
        assert!((v - sol.objective.unwrap()).abs() < 1e-6);
        assert!(w >= spec.rho() - 1e-6);
        let brute = brute_force_optimal(&spec, 0.0).unwrap().unwrap();
        assert!((brute - sol.objective.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn policy_occupancy_is_feasible() {
        let spec = random_cmdp(3, 2, 3, 5);
        let pi = PolicyTable::uniform(3, 3, 2);
        let occ = occupancy_of_policy(&spec, &pi);
        assert!(occ.max_residual(&spec) < 1e-12);
        let (v, w) = policy_value(&spec, &pi).unwrap();
        assert!((occ.reward_value(&spec) - v).abs() < 1e-12);
        assert!((occ.utility_value(&spec) - w).abs() < 1e-12);
    }
}
