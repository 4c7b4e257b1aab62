//! Triple-Q: reward and utility Q-tables with count-based learning rates and
//! UCB bonuses, plus a virtual queue updated once per frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{CmdpSpec, PolicyTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Theory,
    Practical,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Mode::Theory),
            "practical" => Ok(Mode::Practical),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Values replacing the formula defaults in practical mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub iota: Option<f64>,
    pub epsilon: Option<f64>,
    pub chi: Option<f64>,
    pub eta: Option<f64>,
    pub frame_len: Option<usize>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        *self == Overrides::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Total number of learning episodes `K`.
    pub episodes: usize,
    pub chi: f64,
    pub eta: f64,
    pub iota: f64,
    /// Frame exponent; frames last `floor(K^alpha)` episodes.
    pub alpha_exp: f64,
    pub frame_len: usize,
    /// Tightening added to the threshold in the queue update.
    pub epsilon: f64,
    pub mode: Mode,
}

/// Frame exponent `alpha`.
pub const ALPHA: f64 = 0.6;

/// `floor(k^p)` that is not fooled by `powf` landing a hair below an integer.
pub fn floor_pow(k: usize, p: f64) -> usize {
    let v = (k as f64).powf(p);
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        v.floor() as usize
    }
}

impl HyperParams {
    /// Formula values: `chi = eta = K^0.2`, `iota = 128 ln(sqrt(2SAH) K)`,
    /// `epsilon = 8 sqrt(S A H^6 iota^3) / K^0.2`, frames of `floor(K^0.6)`.
    pub fn theory(num_states: usize, num_actions: usize, horizon: usize, episodes: usize) -> Self {
        let k = episodes as f64;
        let (s, a, h) = (num_states as f64, num_actions as f64, horizon as f64);
        let k02 = k.powf(0.2);
        let iota = 128.0 * ((2.0 * s * a * h).sqrt() * k).ln();
        let epsilon = 8.0 * (s * a * h.powi(6) * iota.powi(3)).sqrt() / k02;
        HyperParams {
            episodes,
            chi: k02,
            eta: k02,
            iota,
            alpha_exp: ALPHA,
            frame_len: floor_pow(episodes, ALPHA).max(1),
            epsilon,
            mode: Mode::Theory,
        }
    }

    /// Desk-scale defaults: `epsilon = 0`, `iota = 1`, `chi = eta = K^0.2`,
    /// frames of `floor(K^0.6)`.
    pub fn practical(episodes: usize) -> Self {
        let k02 = (episodes as f64).powf(0.2);
        HyperParams {
            episodes,
            chi: k02,
            eta: k02,
            iota: 1.0,
            alpha_exp: ALPHA,
            frame_len: floor_pow(episodes, ALPHA).max(1),
            epsilon: 0.0,
            mode: Mode::Practical,
        }
    }

    pub fn for_spec(spec: &CmdpSpec, episodes: usize, mode: Mode) -> Self {
        match mode {
            Mode::Theory => Self::theory(
                spec.num_states(),
                spec.num_actions(),
                spec.horizon(),
                episodes,
            ),
            Mode::Practical => Self::practical(episodes),
        }
    }

    /// Apply overrides; only legal in practical mode.
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self> {
        if o.is_empty() {
            return Ok(self);
        }
        if self.mode != Mode::Practical {
            return Err(Error::config(
                "mode",
                "hyperparameter overrides require practical mode",
            ));
        }
        if let Some(v) = o.iota {
            self.iota = v;
        }
        if let Some(v) = o.epsilon {
            self.epsilon = v;
        }
        if let Some(v) = o.chi {
            self.chi = v;
        }
        if let Some(v) = o.eta {
            self.eta = v;
        }
        if let Some(v) = o.frame_len {
            self.frame_len = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("episodes", "must be at least 1"));
        }
        for (name, v) in [("chi", self.chi), ("eta", self.eta), ("iota", self.iota)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(
                "epsilon",
                format!("must be >= 0, got {}", self.epsilon),
            ));
        }
        if self.frame_len == 0 || self.frame_len > self.episodes {
            return Err(Error::config(
                "frame-len",
                format!("must lie in [1, {}], got {}", self.episodes, self.frame_len),
            ));
        }
        Ok(())
    }

    /// `2 H^3 sqrt(iota) / eta`, added to every reward Q entry at a frame boundary.
    pub fn extra_bonus(&self, horizon: usize) -> f64 {
        2.0 * (horizon as f64).powi(3) * self.iota.sqrt() / self.eta
    }

    /// `H^2 sqrt(iota)`, the bound on every Q and C entry.
    pub fn table_bound(&self, horizon: usize) -> f64 {
        (horizon as f64).powi(2) * self.iota.sqrt()
    }
}

/// `alpha_t = (chi + 1) / (chi + t)`.
pub fn learning_rate(t: u64, chi: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument(
            "learning rate is undefined before the first visit (t = 0)".into(),
        ));
    }
    Ok((chi + 1.0) / (chi + t as f64))
}

/// `b_t = 1/4 sqrt(H^2 iota (chi + 1) / (chi + t))`.
pub fn bonus(t: u64, hp: &HyperParams, horizon: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument(
            "bonus is undefined before the first visit (t = 0)".into(),
        ));
    }
    Ok(bonus_unchecked(t, hp.chi, hp.iota, horizon))
}

#[inline]
fn bonus_unchecked(t: u64, chi: f64, iota: f64, horizon: usize) -> f64 {
    let h = horizon as f64;
    0.25 * (h * h * iota * (chi + 1.0) / (chi + t as f64)).sqrt()
}

/// Weights `(alpha_t^0, [alpha_t^1 .. alpha_t^t])` with
/// `alpha_t^0 = prod_{j<=t} (1 - alpha_j)` and
/// `alpha_t^i = alpha_i prod_{i<j<=t} (1 - alpha_j)`.
pub fn weight_sequence(t: usize, chi: f64) -> (f64, Vec<f64>) {
    let alpha = |j: usize| (chi + 1.0) / (chi + j as f64);
    let mut weights = vec![0.0; t];
    // Build from the back: running product of (1 - alpha_j) for j > i.
    let mut tail = 1.0;
    for i in (1..=t).rev() {
        weights[i - 1] = alpha(i) * tail;
        tail *= 1.0 - alpha(i);
    }
    (tail, weights)
}

/// Mutable learner state. Steps are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub rho: f64,
    pub hp: HyperParams,
    /// Reward Q-table `[h][x][a]`.
    pub q: Vec<f64>,
    /// Utility Q-table `[h][x][a]`.
    pub c: Vec<f64>,
    /// Visits in the current frame `[h][x][a]`.
    pub n: Vec<u64>,
    /// Virtual queue.
    pub z: f64,
    /// Sum of `C_1(x_1, a_1)` over the current frame.
    pub cbar: f64,
    pub episode_in_frame: usize,
    pub episodes_done: usize,
    pub frames_done: usize,
}

/// What happened during one learning episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub utility: f64,
    /// `C_1(x_1, a_1)` as read at the first step.
    pub c1_first: f64,
    /// Whether the episode closed a frame.
    pub frame_fired: bool,
}

impl LearnerState {
    /// All Q and C entries `H`; counts, queue and accumulator zero.
    pub fn init(spec: &CmdpSpec, hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        let len = spec.table_len();
        let h = spec.horizon() as f64;
        Ok(LearnerState {
            num_states: spec.num_states(),
            num_actions: spec.num_actions(),
            horizon: spec.horizon(),
            rho: spec.rho(),
            hp,
            q: vec![h; len],
            c: vec![h; len],
            n: vec![0; len],
            z: 0.0,
            cbar: 0.0,
            episode_in_frame: 0,
            episodes_done: 0,
            frames_done: 0,
        })
    }

    #[inline]
    pub fn index(&self, h: usize, x: usize, a: usize) -> usize {
        (h * self.num_states + x) * self.num_actions + a
    }

    pub fn q_at(&self, h: usize, x: usize, a: usize) -> f64 {
        self.q[self.index(h, x, a)]
    }

    pub fn c_at(&self, h: usize, x: usize, a: usize) -> f64 {
        self.c[self.index(h, x, a)]
    }

    /// Scaled Lagrange multiplier estimate `Z / eta`.
    pub fn multiplier(&self) -> f64 {
        self.z / self.hp.eta
    }

    /// `Q_h(x,a) + (Z/eta) C_h(x,a)`.
    pub fn pseudo_value(&self, h: usize, x: usize, a: usize) -> f64 {
        let i = self.index(h, x, a);
        self.q[i] + self.multiplier() * self.c[i]
    }

    /// Greedy action on the pseudo-Q value, ties to the lowest index.
    pub fn select_action(&self, h: usize, x: usize) -> usize {
        let lambda = self.multiplier();
        let start = self.index(h, x, 0);
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for a in 0..self.num_actions {
            let v = self.q[start + a] + lambda * self.c[start + a];
            if v > best_v {
                best_v = v;
                best = a;
            }
        }
        best
    }

    /// SARSA-style update of `(h, x, a)` with targets `r + v_next + b_t` and
    /// `g + w_next + b_t` at the incremented visit count.
    #[allow(clippy::too_many_arguments)]
    pub fn update_step(
        &mut self,
        h: usize,
        x: usize,
        a: usize,
        r: f64,
        g: f64,
        v_next: f64,
        w_next: f64,
    ) -> Result<()> {
        if h >= self.horizon {
            return Err(Error::OutOfRange {
                what: "step",
                index: h,
                limit: self.horizon,
            });
        }
        if x >= self.num_states {
            return Err(Error::OutOfRange {
                what: "state",
                index: x,
                limit: self.num_states,
            });
        }
        if a >= self.num_actions {
            return Err(Error::OutOfRange {
                what: "action",
                index: a,
                limit: self.num_actions,
            });
        }
        let i = self.index(h, x, a);
        self.n[i] += 1;
        let t = self.n[i];
        let alpha = (self.hp.chi + 1.0) / (self.hp.chi + t as f64);
        let b = bonus_unchecked(t, self.hp.chi, self.hp.iota, self.horizon);
        self.q[i] = (1.0 - alpha) * self.q[i] + alpha * (r + v_next + b);
        self.c[i] = (1.0 - alpha) * self.c[i] + alpha * (g + w_next + b);
        Ok(())
    }

    /// Close an episode: accumulate `C_1(x_1,a_1)` and fire the frame boundary
    /// after `frame_len` episodes, or at episode `K` for a trailing partial
    /// frame. Returns whether a boundary fired.
    pub fn end_episode(&mut self, c1_first: f64) -> bool {
        self.cbar += c1_first;
        self.episode_in_frame += 1;
        self.episodes_done += 1;
        if self.episode_in_frame == self.hp.frame_len || self.episodes_done == self.hp.episodes {
            self.frame_boundary();
            true
        } else {
            false
        }
    }

    /// Reset counts, add the extra bonus to `Q`, clamp both tables to `H`
    /// wherever either reaches `H`, then update the virtual queue.
    ///
    /// The queue update divides `C-bar` by the number of episodes in the
    /// frame, which equals `frame_len` except for a trailing partial frame.
    pub fn frame_boundary(&mut self) {
        let h = self.horizon as f64;
        let extra = self.hp.extra_bonus(self.horizon);
        self.n.fill(0);
        for (q, c) in self.q.iter_mut().zip(self.c.iter_mut()) {
            *q += extra;
            if *q >= h || *c >= h {
                *q = h;
                *c = h;
            }
        }
        let episodes = self.episode_in_frame.max(1) as f64;
        self.z = (self.z + self.rho + self.hp.epsilon - self.cbar / episodes).max(0.0);
        self.cbar = 0.0;
        self.episode_in_frame = 0;
        self.frames_done += 1;
    }

    /// Deterministic greedy pseudo-Q policy for the current tables and queue.
    pub fn greedy_policy(&self) -> PolicyTable {
        let mut actions = Vec::with_capacity(self.horizon * self.num_states);
        for h in 0..self.horizon {
            for x in 0..self.num_states {
                actions.push(self.select_action(h, x));
            }
        }
        PolicyTable::Deterministic {
            horizon: self.horizon,
            num_states: self.num_states,
            num_actions: self.num_actions,
            actions,
        }
    }

    /// One learning episode against `spec`, including the frame bookkeeping.
    pub fn run_episode<R: Rng + ?Sized>(&mut self, spec: &CmdpSpec, rng: &mut R) -> EpisodeOutcome {
        let mut out = self.run_episode_updates(spec, rng);
        out.frame_fired = self.end_episode(out.c1_first);
        out
    }

    /// The in-episode part of [`run_episode`](Self::run_episode): act greedily
    /// and update the Q-tables, without closing the episode.
    ///
    /// Random draws, in order: `x_1`, then one next-state draw per step.
    pub fn run_episode_updates<R: Rng + ?Sized>(
        &mut self,
        spec: &CmdpSpec,
        rng: &mut R,
    ) -> EpisodeOutcome {
        let horizon = self.horizon;
        let mut states = Vec::with_capacity(horizon);
        let mut actions = Vec::with_capacity(horizon);
        let mut x = spec.sample_initial(rng);
        let (mut reward, mut utility) = (0.0, 0.0);
        let mut c1_first = 0.0;
        let mut prev: Option<(usize, usize, usize, f64, f64)> = None;

        for h in 0..horizon {
            let a = self.select_action(h, x);
            if let Some((ph, px, pa, pr, pg)) = prev {
                let v_next = self.q_at(h, x, a);
                let w_next = self.c_at(h, x, a);
                self.update_step(ph, px, pa, pr, pg, v_next, w_next)
                    .expect("indices come from the model");
            }
            if h == 0 {
                c1_first = self.c_at(0, x, a);
            }
            let r = spec.reward(h, x, a);
            let g = spec.utility(h, x, a);
            reward += r;
            utility += g;
            states.push(x);
            actions.push(a);
            prev = Some((h, x, a, r, g));
            x = spec.sample_next(h, x, a, rng);
        }
        if let Some((ph, px, pa, pr, pg)) = prev {
            self.update_step(ph, px, pa, pr, pg, 0.0, 0.0)
                .expect("indices come from the model");
        }
        EpisodeOutcome {
            states,
            actions,
            reward,
            utility,
            c1_first,
            frame_fired: false,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
