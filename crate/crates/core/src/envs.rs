//! Instance constructors: the obstacle grid world, seeded random models and
//! the one-state chain fixture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{cost_to_utility, CmdpSpec};
use crate::error::{Error, Result};
use crate::lp::{deterministic_policies, ENUMERATION_LIMIT};

/// One state, two actions, `H = 1`, `r = (1, 0)`, `g = (0, 1)`, `rho = 0.5`.
pub fn chain_cmdp() -> CmdpSpec {
    CmdpSpec::new(
        1,
        2,
        1,
        vec![1.0, 1.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        0.5,
        vec![1.0],
    )
    .expect("chain fixture is valid")
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 {
            return draws.into_iter().map(|d| d / sum).collect();
        }
    }
}

fn normalized_ok(row: &[f64]) -> bool {
    (row.iter().sum::<f64>() - 1.0).abs() <= crate::cmdp::PROB_TOL
}

/// Seeded random model. Rows of `P` and `mu0` are normalized uniform draws,
/// `r` and `g` are uniform on `[0,1)`. The threshold is 80% of the largest
/// achievable utility when the policy space is enumerable, else `H/2`.
pub fn random_cmdp(num_states: usize, num_actions: usize, horizon: usize, seed: u64) -> CmdpSpec {
    assert!(num_states >= 1 && num_actions >= 1 && horizon >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sa = horizon * num_states * num_actions;
    let mut transitions = Vec::with_capacity(sa * num_states);
    for _ in 0..sa {
        let mut row = random_distribution(&mut rng, num_states);
        while !normalized_ok(&row) {
            row = random_distribution(&mut rng, num_states);
        }
        transitions.extend(row);
    }
    let rewards: Vec<f64> = (0..sa).map(|_| rng.gen::<f64>()).collect();
    let utilities: Vec<f64> = (0..sa).map(|_| rng.gen::<f64>()).collect();
    let mut initial = random_distribution(&mut rng, num_states);
    while !normalized_ok(&initial) {
        initial = random_distribution(&mut rng, num_states);
    }

    let mut spec = CmdpSpec::new(
        num_states,
        num_actions,
        horizon,
        transitions,
        rewards,
        utilities,
        0.0,
        initial,
    )
    .expect("random construction is valid");

    let rho = match deterministic_policies(&spec) {
        Ok(policies) => {
            let best = policies
                .iter()
                .map(|pi| crate::cmdp::policy_value(&spec, pi).expect("shape").1)
                .fold(0.0f64, f64::max);
            0.8 * best
        }
        Err(_) => 0.5 * horizon as f64,
    };
    spec = spec.with_rho(rho).expect("rho within [0, H]");
    spec
}

/// `true` when [`random_cmdp`] would pick `rho` by enumeration.
pub fn enumerable(num_states: usize, num_actions: usize, horizon: usize) -> bool {
    (num_actions as f64).powi((num_states * horizon) as i32) <= ENUMERATION_LIMIT as f64
}

/// `(row, col)` grid coordinates.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartSpec {
    Cell(Cell),
    /// Row-major distribution over all cells.
    Distribution(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorldConfig {
    pub width: usize,
    pub height: usize,
    pub obstacles: Vec<Cell>,
    pub start: StartSpec,
    pub goal: Cell,
    pub horizon: usize,
    pub cost_budget: f64,
    pub slip_prob: f64,
}

/// Default 8x8 layout. The goal in the bottom-right corner is fenced by
/// obstacles on its two open sides and a wall partly blocks the diagonal.
pub const DEFAULT_OBSTACLES: &[Cell] = &[
    (2, 2),
    (2, 3),
    (2, 4),
    (3, 2),
    (4, 5),
    (5, 5),
    (5, 3),
    (6, 6),
    (6, 7),
    (7, 6),
];

impl Default for GridWorldConfig {
    fn default() -> Self {
        GridWorldConfig {
            width: 8,
            height: 8,
            obstacles: DEFAULT_OBSTACLES.to_vec(),
            start: StartSpec::Cell((0, 0)),
            goal: (7, 7),
            horizon: 20,
            cost_budget: 6.0,
            slip_prob: 0.0,
        }
    }
}

/// Grid actions in index order.
pub const ACTIONS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
pub const ACTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];

impl GridWorldConfig {
    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_index(&self, (r, c): Cell) -> usize {
        r * self.width + c
    }

    fn in_bounds(&self, (r, c): Cell) -> bool {
        r < self.height && c < self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config(
                "width/height",
                "grid dimensions must be positive",
            ));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be positive"));
        }
        if !self.in_bounds(self.goal) {
            return Err(Error::config(
                "goal",
                format!("{:?} outside the grid", self.goal),
            ));
        }
        for &o in &self.obstacles {
            if !self.in_bounds(o) {
                return Err(Error::config(
                    "obstacles",
                    format!("{o:?} outside the grid"),
                ));
            }
            if o == self.goal {
                return Err(Error::config(
                    "obstacles",
                    "goal cell cannot be an obstacle",
                ));
            }
        }
        match &self.start {
            StartSpec::Cell(c) if !self.in_bounds(*c) => {
                return Err(Error::config("start", format!("{c:?} outside the grid")));
            }
            StartSpec::Distribution(d) => {
                if d.len() != self.num_cells() {
                    return Err(Error::config(
                        "start",
                        format!(
                            "distribution has {} entries, grid has {}",
                            d.len(),
                            self.num_cells()
                        ),
                    ));
                }
                let sum: f64 = d.iter().sum();
                if d.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > crate::cmdp::PROB_TOL {
                    return Err(Error::config(
                        "start",
                        "distribution must be non-negative and sum to 1",
                    ));
                }
            }
            _ => {}
        }
        if !(0.0..=self.horizon as f64).contains(&self.cost_budget) {
            return Err(Error::config(
                "budget",
                format!("{} outside [0, {}]", self.cost_budget, self.horizon),
            ));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::config("slip", "slip probability must lie in [0, 1)"));
        }
        Ok(())
    }

    fn step(&self, (r, c): Cell, action: usize) -> Cell {
        let (dr, dc) = ACTIONS[action];
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 0 || nc < 0 || nr as usize >= self.height || nc as usize >= self.width {
            (r, c)
        } else {
            (nr as usize, nc as usize)
        }
    }

    /// Raw (unnormalized) reward of arriving in `cell`: 100 at the goal,
    /// otherwise the longest pairwise cell distance minus the distance to the
    /// goal.
    pub fn raw_reward(&self, cell: Cell) -> f64 {
        if cell == self.goal {
            return 100.0;
        }
        let longest = (((self.height - 1).pow(2) + (self.width - 1).pow(2)) as f64).sqrt();
        let dr = cell.0 as f64 - self.goal.0 as f64;
        let dc = cell.1 as f64 - self.goal.1 as f64;
        longest - (dr * dr + dc * dc).sqrt()
    }
}

/// Build the grid-world model.
///
/// States are cells (row-major). Taking an action moves to the neighbouring
/// cell (bumping into the border leaves the agent in place); with `slip_prob`
/// the move is replaced by one of the four directions uniformly. Reward and
/// cost are charged for the cell the agent arrives in: reward
/// `raw_reward / 100`, cost 1 for an obstacle cell. The goal is absorbing
/// with reward 0 and cost 0 once reached, so every episode lasts `H` steps.
pub fn grid_world(cfg: &GridWorldConfig) -> Result<CmdpSpec> {
    cfg.validate()?;
    let s_n = cfg.num_cells();
    let a_n = ACTIONS.len();
    let h_n = cfg.horizon;
    let goal = cfg.cell_index(cfg.goal);
    let mut is_obstacle = vec![false; s_n];
    for &o in &cfg.obstacles {
        is_obstacle[cfg.cell_index(o)] = true;
    }

    let mut step_p = vec![0.0; s_n * a_n * s_n];
    let mut step_r = vec![0.0; s_n * a_n];
    let mut step_cost = vec![0.0; s_n * a_n];
    for r in 0..cfg.height {
        for c in 0..cfg.width {
            let x = cfg.cell_index((r, c));
            for a in 0..a_n {
                let i = x * a_n + a;
                let row = &mut step_p[i * s_n..(i + 1) * s_n];
                if x == goal {
                    row[goal] = 1.0;
                    continue;
                }
                let intended = cfg.cell_index(cfg.step((r, c), a));
                row[intended] += 1.0 - cfg.slip_prob;
                if cfg.slip_prob > 0.0 {
                    for b in 0..a_n {
                        row[cfg.cell_index(cfg.step((r, c), b))] += cfg.slip_prob / a_n as f64;
                    }
                }
                let (mut er, mut ec) = (0.0, 0.0);
                for (y, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        let cell = (y / cfg.width, y % cfg.width);
                        er += p * cfg.raw_reward(cell) / 100.0;
                        if is_obstacle[y] {
                            ec += p;
                        }
                    }
                }
                step_r[i] = er.clamp(0.0, 1.0);
                step_cost[i] = ec.clamp(0.0, 1.0);
            }
        }
    }
    let mut transitions = Vec::with_capacity(h_n * step_p.len());
    let mut rewards = Vec::with_capacity(h_n * step_r.len());
    let mut costs = Vec::with_capacity(h_n * step_cost.len());
    for _ in 0..h_n {
        transitions.extend_from_slice(&step_p);
        rewards.extend_from_slice(&step_r);
        costs.extend_from_slice(&step_cost);
    }
    let initial = match &cfg.start {
        StartSpec::Cell(cell) => {
            let mut d = vec![0.0; s_n];
            d[cfg.cell_index(*cell)] = 1.0;
            d
        }
        StartSpec::Distribution(d) => d.clone(),
    };
    let with_costs = CmdpSpec::new(s_n, a_n, h_n, transitions, rewards, costs, 0.0, initial)?;
    cost_to_utility(&with_costs, cfg.cost_budget)
}
