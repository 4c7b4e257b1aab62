//! Tabular episodic constrained MDP model, policies and exact policy evaluation.
//!
//! Steps are zero-based in code (`h = 0..H`), so the step the text of the
//! algorithm calls `h = 1` is index 0 here. All tables are flat row-major
//! vectors; the index helpers on [`CmdpSpec`] define the layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability rows and the initial distribution.
pub const PROB_TOL: f64 = 1e-12;

/// Full tabular model: kernels, reward/utility tables, horizon, threshold and
/// initial distribution.
///
/// Construction validates every invariant and never repairs input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct CmdpSpec {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    utilities: Vec<f64>,
    rho: f64,
    initial_dist: Vec<f64>,
}

/// Serialized form of [`CmdpSpec`]; tables are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// `[h][x][a][x']`
    pub transitions: Vec<f64>,
    /// `[h][x][a]`
    pub rewards: Vec<f64>,
    /// `[h][x][a]`
    pub utilities: Vec<f64>,
    pub rho: f64,
    pub initial_dist: Vec<f64>,
}

impl TryFrom<RawSpec> for CmdpSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        CmdpSpec::new(
            raw.num_states,
            raw.num_actions,
            raw.horizon,
            raw.transitions,
            raw.rewards,
            raw.utilities,
            raw.rho,
            raw.initial_dist,
        )
    }
}

impl From<CmdpSpec> for RawSpec {
    fn from(spec: CmdpSpec) -> Self {
        RawSpec {
            num_states: spec.num_states,
            num_actions: spec.num_actions,
            horizon: spec.horizon,
            transitions: spec.transitions,
            rewards: spec.rewards,
            utilities: spec.utilities,
            rho: spec.rho,
            initial_dist: spec.initial_dist,
        }
    }
}

fn check_len(table: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension {
            table,
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

fn check_distribution(what: &str, row: &[f64]) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::InvalidModel(format!("{what} has invalid entry {p}")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl CmdpSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        utilities: Vec<f64>,
        rho: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::InvalidModel(format!(
                "S, A, H must be positive (got {num_states}, {num_actions}, {horizon})"
            )));
        }
        let sa = horizon * num_states * num_actions;
        check_len("transitions", &transitions, sa * num_states)?;
        check_len("rewards", &rewards, sa)?;
        check_len("utilities", &utilities, sa)?;
        check_len("initial_dist", &initial_dist, num_states)?;

        for (i, row) in transitions.chunks(num_states).enumerate() {
            let h = i / (num_states * num_actions);
            let x = (i / num_actions) % num_states;
            let a = i % num_actions;
            check_distribution(&format!("transition row (h={h}, x={x}, a={a})"), row)?;
        }
        for (name, table) in [("rewards", &rewards), ("utilities", &utilities)] {
            if let Some(v) = table.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidModel(format!(
                    "{name} entry {v} outside [0,1]"
                )));
            }
        }
        check_distribution("initial_dist", &initial_dist)?;
        if !(0.0..=horizon as f64).contains(&rho) {
            return Err(Error::InvalidModel(format!(
                "rho {rho} outside [0, {horizon}]"
            )));
        }

        Ok(CmdpSpec {
            num_states,
            num_actions,
            horizon,
            transitions,
            rewards,
            utilities,
            rho,
            initial_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Same model with a different threshold.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        let mut out = self.clone();
        if !(0.0..=self.horizon as f64).contains(&rho) {
            return Err(Error::InvalidModel(format!(
                "rho {rho} outside [0, {}]",
                self.horizon
            )));
        }
        out.rho = rho;
        Ok(out)
    }

    /// Flat index of `(h, x, a)` in the reward/utility/Q tables.
    #[inline]
    pub fn sa_index(&self, h: usize, x: usize, a: usize) -> usize {
        (h * self.num_states + x) * self.num_actions + a
    }

    /// Number of `(h, x, a)` entries.
    pub fn table_len(&self) -> usize {
        self.horizon * self.num_states * self.num_actions
    }

    #[inline]
    pub fn reward(&self, h: usize, x: usize, a: usize) -> f64 {
        self.rewards[self.sa_index(h, x, a)]
    }

    #[inline]
    pub fn utility(&self, h: usize, x: usize, a: usize) -> f64 {
        self.utilities[self.sa_index(h, x, a)]
    }

    /// Next-state distribution `P_h(· | x, a)`.
    #[inline]
    pub fn next_dist(&self, h: usize, x: usize, a: usize) -> &[f64] {
        let start = self.sa_index(h, x, a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    /// Sample `x_1 ~ mu0`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial_dist, rng.gen::<f64>())
    }

    /// Sample `x' ~ P_h(· | x, a)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, h: usize, x: usize, a: usize, rng: &mut R) -> usize {
        sample_index(self.next_dist(h, x, a), rng.gen::<f64>())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Inverse-CDF draw from a probability vector using one uniform `u in [0,1)`.
///
/// Zero-probability entries are never returned; rounding slack at the top end
/// falls to the last entry with positive mass.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Per-step policy, deterministic (`pi_h(x)`) or stochastic (`pi_h(a|x)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyTable {
    Deterministic {
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        /// `[h][x]`
        actions: Vec<usize>,
    },
    Stochastic {
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        /// `[h][x][a]`
        probs: Vec<f64>,
    },
}

impl PolicyTable {
    pub fn deterministic(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        actions: Vec<usize>,
    ) -> Result<Self> {
        if actions.len() != horizon * num_states {
            return Err(Error::Dimension {
                table: "policy actions",
                expected: horizon * num_states,
                found: actions.len(),
            });
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::OutOfRange {
                what: "policy action",
                index: a,
                limit: num_actions,
            });
        }
        Ok(PolicyTable::Deterministic {
            horizon,
            num_states,
            num_actions,
            actions,
        })
    }

    pub fn stochastic(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        if probs.len() != horizon * num_states * num_actions {
            return Err(Error::Dimension {
                table: "policy probabilities",
                expected: horizon * num_states * num_actions,
                found: probs.len(),
            });
        }
        for (i, row) in probs.chunks(num_actions).enumerate() {
            check_distribution(
                &format!("policy row (h={}, x={})", i / num_states, i % num_states),
                row,
            )?;
        }
        Ok(PolicyTable::Stochastic {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    /// Uniform stochastic policy.
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        PolicyTable::Stochastic {
            horizon,
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; horizon * num_states * num_actions],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        match self {
            PolicyTable::Deterministic {
                horizon,
                num_states,
                num_actions,
                ..
            }
            | PolicyTable::Stochastic {
                horizon,
                num_states,
                num_actions,
                ..
            } => (*horizon, *num_states, *num_actions),
        }
    }

    pub fn prob(&self, h: usize, x: usize, a: usize) -> f64 {
        match self {
            PolicyTable::Deterministic {
                num_states,
                actions,
                ..
            } => {
                if actions[h * num_states + x] == a {
                    1.0
                } else {
                    0.0
                }
            }
            PolicyTable::Stochastic {
                num_states,
                num_actions,
                probs,
                ..
            } => probs[(h * num_states + x) * num_actions + a],
        }
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, h: usize, x: usize, rng: &mut R) -> usize {
        match self {
            PolicyTable::Deterministic {
                num_states,
                actions,
                ..
            } => actions[h * num_states + x],
            PolicyTable::Stochastic {
                num_states,
                num_actions,
                probs,
                ..
            } => {
                let start = (h * num_states + x) * num_actions;
                sample_index(&probs[start..start + num_actions], rng.gen::<f64>())
            }
        }
    }

    fn check_against(&self, spec: &CmdpSpec) -> Result<()> {
        let (h, s, a) = self.shape();
        let expected = spec.table_len();
        if (h, s, a) != (spec.horizon, spec.num_states, spec.num_actions) {
            return Err(Error::Dimension {
                table: "policy",
                expected,
                found: h * s * a,
            });
        }
        Ok(())
    }
}

/// Exact value tables of a policy. `v` and `w` carry an explicit zero row for
/// step `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// `[h][x]`, `h = 0..=H`
    pub v: Vec<f64>,
    /// `[h][x]`, `h = 0..=H`
    pub w: Vec<f64>,
    /// `[h][x][a]`
    pub q: Vec<f64>,
    /// `[h][x][a]`
    pub c: Vec<f64>,
}

impl ValueTables {
    pub fn v_at(&self, h: usize, x: usize) -> f64 {
        self.v[h * self.num_states + x]
    }

    pub fn w_at(&self, h: usize, x: usize) -> f64 {
        self.w[h * self.num_states + x]
    }

    pub fn q_at(&self, h: usize, x: usize, a: usize) -> f64 {
        self.q[(h * self.num_states + x) * self.num_actions + a]
    }

    pub fn c_at(&self, h: usize, x: usize, a: usize) -> f64 {
        self.c[(h * self.num_states + x) * self.num_actions + a]
    }
}

/// Exact backward recursion `Q_h = r_h + P_h V_{h+1}`, `V_h = <pi_h, Q_h>`,
/// and the same for the utility pair `(C, W)`.
pub fn policy_eval(spec: &CmdpSpec, policy: &PolicyTable) -> Result<ValueTables> {
    policy.check_against(spec)?;
    let (s_n, a_n, h_n) = (spec.num_states, spec.num_actions, spec.horizon);
    let mut v = vec![0.0; (h_n + 1) * s_n];
    let mut w = vec![0.0; (h_n + 1) * s_n];
    let mut q = vec![0.0; h_n * s_n * a_n];
    let mut c = vec![0.0; h_n * s_n * a_n];

    for h in (0..h_n).rev() {
        let (cur, next) = (h * s_n, (h + 1) * s_n);
        for x in 0..s_n {
            let mut vx = 0.0;
            let mut wx = 0.0;
            for a in 0..a_n {
                let i = spec.sa_index(h, x, a);
                let p = spec.next_dist(h, x, a);
                let mut ev = 0.0;
                let mut ew = 0.0;
                for (y, &py) in p.iter().enumerate() {
                    if py != 0.0 {
                        ev += py * v[next + y];
                        ew += py * w[next + y];
                    }
                }
                q[i] = spec.rewards[i] + ev;
                c[i] = spec.utilities[i] + ew;
                let pa = policy.prob(h, x, a);
                if pa != 0.0 {
                    vx += pa * q[i];
                    wx += pa * c[i];
                }
            }
            v[cur + x] = vx;
            w[cur + x] = wx;
        }
    }

    Ok(ValueTables {
        num_states: s_n,
        num_actions: a_n,
        horizon: h_n,
        v,
        w,
        q,
        c,
    })
}

/// `(sum_x mu0(x) V_1(x), sum_x mu0(x) W_1(x))`.
pub fn expected_initial_value(spec: &CmdpSpec, values: &ValueTables) -> (f64, f64) {
    spec.initial_dist
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(v, w), (x, &p)| {
            (v + p * values.v_at(0, x), w + p * values.w_at(0, x))
        })
}

/// Convenience: `expected_initial_value(policy_eval(..))`.
pub fn policy_value(spec: &CmdpSpec, policy: &PolicyTable) -> Result<(f64, f64)> {
    let values = policy_eval(spec, policy)?;
    Ok(expected_initial_value(spec, &values))
}

/// Reinterpret the utility table of `costs` as per-step costs in `[0,1]` and
/// return the equivalent utility model: `g = 1 - cost`, `rho = H - budget`.
pub fn cost_to_utility(costs: &CmdpSpec, budget: f64) -> Result<CmdpSpec> {
    let h = costs.horizon as f64;
    if !(0.0..=h).contains(&budget) {
        return Err(Error::InvalidArgument(format!(
            "cost budget {budget} outside [0, {h}]"
        )));
    }
    let mut out = costs.clone();
    for g in &mut out.utilities {
        *g = 1.0 - *g;
    }
    out.rho = h - budget;
    Ok(out)
}

/// Outcome of one simulated episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSample {
    pub initial_state: usize,
    pub reward: f64,
    pub utility: f64,
}

/// Roll one episode of `policy` from `x_1 ~ mu0`.
///
/// Draw order per episode: initial state, then for each step the action
/// (stochastic policies only) followed by the next state.
pub fn sample_episode<R: Rng + ?Sized>(
    spec: &CmdpSpec,
    policy: &PolicyTable,
    rng: &mut R,
) -> EpisodeSample {
    let x1 = spec.sample_initial(rng);
    let mut x = x1;
    let (mut reward, mut utility) = (0.0, 0.0);
    for h in 0..spec.horizon {
        let a = policy.sample_action(h, x, rng);
        reward += spec.reward(h, x, a);
        utility += spec.utility(h, x, a);
        x = spec.sample_next(h, x, a, rng);
    }
    EpisodeSample {
        initial_state: x1,
        reward,
        utility,
    }
}
