//! Online learning loop with exact per-episode policy evaluation, regret and
//! violation accounting, the mixture policy, stop mode and the
//! overestimation audit.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{policy_eval, policy_value, CmdpSpec, PolicyTable, ValueTables};
use crate::error::{Error, Result};
use crate::learner::{floor_pow, EpisodeOutcome, HyperParams, LearnerState};
use crate::lp::{optimal_policy, solve_cmdp_lp};

/// CSV header; column order is part of the output format.
pub const CSV_HEADER: &str =
    "k,reward_realized,utility_realized,v_pik,w_pik,z,regret_cum,violation_cum";

/// RNG stream used for environment sampling. Other streams are reserved.
pub const ENV_STREAM: u64 = 0;

/// Per-run generator: ChaCha8 seeded from `seed`, environment draws on
/// [`ENV_STREAM`].
pub fn run_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ENV_STREAM);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// One-based episode index.
    pub k: usize,
    pub reward_realized: f64,
    pub utility_realized: f64,
    /// `V_1^{pi_k}` under `mu0`; carried forward between evaluations.
    pub v_pik: f64,
    pub w_pik: f64,
    /// Virtual queue at the start of the episode.
    pub z: f64,
    pub regret_cum: f64,
    pub violation_cum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub seed: u64,
    pub hyperparameters: HyperParams,
    /// `V_1^*`, the untightened LP optimum.
    pub baseline_objective: f64,
    pub rho: f64,
    pub eval_every: usize,
    /// `"learn"` or `"stop"`.
    pub phase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub header: RunHeader,
    pub rows: Vec<MetricsRow>,
    /// Number of frame boundaries fired during the run.
    pub frames: usize,
}

impl RunMetrics {
    pub fn final_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.regret_cum)
    }

    pub fn final_violation(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.violation_cum)
    }

    /// `sum_k (rho - realized utility)`.
    pub fn empirical_violation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| self.header.rho - r.utility_realized)
            .sum()
    }

    /// Mean of `f` over the last `n` rows.
    pub fn trailing_mean(&self, n: usize, f: impl Fn(&MetricsRow) -> f64) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
    }

    /// Mean of `f` over the `n` rows ending at (zero-based, exclusive) `end`.
    pub fn window_mean(&self, end: usize, n: usize, f: impl Fn(&MetricsRow) -> f64) -> f64 {
        let rows = &self.rows[end.saturating_sub(n)..end];
        rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for row in r.deserialize() {
            rows.push(row?);
        }
        Ok(rows)
    }

    /// Sidecar JSON: run header, summary figures and a wall-clock timestamp.
    pub fn sidecar_json(&self) -> Result<String> {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let doc = serde_json::json!({
            "seed": self.header.seed,
            "phase": self.header.phase,
            "hyperparameters": self.header.hyperparameters,
            "baseline_objective": self.header.baseline_objective,
            "rho": self.header.rho,
            "eval_every": self.header.eval_every,
            "episodes": self.rows.len(),
            "frames": self.frames,
            "final_regret": self.final_regret(),
            "final_violation": self.final_violation(),
            "empirical_violation": self.empirical_violation(),
            "timestamp_unix": timestamp,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Hooks into the learning loop.
pub trait EpisodeObserver {
    /// Called with the state at the start of episode `k` (one-based).
    fn episode_start(&mut self, _k: usize, _state: &LearnerState) {}
    /// Called after the in-episode updates, before any frame boundary.
    fn after_updates(&mut self, _k: usize, _state: &LearnerState) {}
    /// Called after the episode is closed (and a boundary possibly fired).
    fn episode_end(&mut self, _k: usize, _state: &LearnerState, _outcome: &EpisodeOutcome) {}
}

impl EpisodeObserver for () {}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub eval_every: usize,
    /// Keep the evaluated greedy snapshots (for mixture evaluation).
    pub keep_snapshots: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            eval_every: 1,
            keep_snapshots: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub state: LearnerState,
    pub snapshots: Vec<PolicyTable>,
}

/// Greedy deterministic pseudo-Q policy of the learner.
pub fn snapshot_policy(state: &LearnerState) -> PolicyTable {
    state.greedy_policy()
}

/// Untightened LP optimum `V_1^*`; infeasible models are an error.
pub fn baseline_objective(spec: &CmdpSpec) -> Result<f64> {
    solve_cmdp_lp(spec, 0.0)?
        .objective
        .ok_or(Error::Infeasible(0.0))
}

struct Accounting {
    v_star: f64,
    rho: f64,
    regret: f64,
    violation: f64,
    current: (f64, f64),
}

impl Accounting {
    fn row(&mut self, k: usize, z: f64, reward: f64, utility: f64) -> MetricsRow {
        self.regret += self.v_star - self.current.0;
        self.violation += self.rho - self.current.1;
        MetricsRow {
            k,
            reward_realized: reward,
            utility_realized: utility,
            v_pik: self.current.0,
            w_pik: self.current.1,
            z,
            regret_cum: self.regret,
            violation_cum: self.violation,
        }
    }
}

/// Run `K = hp.episodes` learning episodes. `baseline` is `V_1^*`.
pub fn run_learning(
    spec: &CmdpSpec,
    hp: &HyperParams,
    seed: u64,
    baseline: f64,
    opts: &RunOptions,
    observer: &mut dyn EpisodeObserver,
) -> Result<RunOutput> {
    if opts.eval_every == 0 {
        return Err(Error::config("eval-every", "must be at least 1"));
    }
    let mut state = LearnerState::init(spec, hp.clone())?;
    let mut rng = run_rng(seed);
    let mut acct = Accounting {
        v_star: baseline,
        rho: spec.rho(),
        regret: 0.0,
        violation: 0.0,
        current: (0.0, 0.0),
    };
    let mut rows = Vec::with_capacity(hp.episodes);
    let mut snapshots = Vec::new();

    for k in 1..=hp.episodes {
        observer.episode_start(k, &state);
        let z = state.z;
        if (k - 1) % opts.eval_every == 0 {
            let pi = state.greedy_policy();
            acct.current = policy_value(spec, &pi)?;
            if opts.keep_snapshots {
                snapshots.push(pi);
            }
        }
        let outcome = state.run_episode_updates(spec, &mut rng);
        observer.after_updates(k, &state);
        let mut outcome = outcome;
        outcome.frame_fired = state.end_episode(outcome.c1_first);
        observer.episode_end(k, &state, &outcome);
        rows.push(acct.row(k, z, outcome.reward, outcome.utility));
    }

    Ok(RunOutput {
        metrics: RunMetrics {
            header: RunHeader {
                seed,
                hyperparameters: hp.clone(),
                baseline_objective: baseline,
                rho: spec.rho(),
                eval_every: opts.eval_every,
                phase: "learn".into(),
            },
            frames: state.frames_done,
            rows,
        },
        state,
        snapshots,
    })
}

/// Solve the baseline LP and run `K` episodes, evaluating the greedy snapshot
/// exactly every `eval_every` episodes.
pub fn run_experiment(
    spec: &CmdpSpec,
    hp: &HyperParams,
    seed: u64,
    eval_every: usize,
) -> Result<RunMetrics> {
    let baseline = baseline_objective(spec)?;
    let opts = RunOptions {
        eval_every,
        keep_snapshots: false,
    };
    Ok(run_learning(spec, hp, seed, baseline, &opts, &mut ())?.metrics)
}

/// `(mean V_1^{pi_k}, mean W_1^{pi_k})`, the values of the uniform mixture.
pub fn mixture_policy_value(snapshots: &[PolicyTable], spec: &CmdpSpec) -> Result<(f64, f64)> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("mixture of zero policies".into()));
    }
    let mut sum = (0.0, 0.0);
    for pi in snapshots {
        let (v, w) = policy_value(spec, pi)?;
        sum.0 += v;
        sum.1 += w;
    }
    let n = snapshots.len() as f64;
    Ok((sum.0 / n, sum.1 / n))
}

#[derive(Debug, Clone)]
pub struct StopOutput {
    pub metrics: RunMetrics,
    pub state: LearnerState,
}

/// Freeze the Q and C tables of a finished run and keep adapting the virtual
/// queue with frames of `floor(sqrt(K))` episodes.
pub fn run_stop_mode(
    state: &LearnerState,
    spec: &CmdpSpec,
    extra_episodes: usize,
    seed: u64,
    baseline: f64,
    eval_every: usize,
) -> Result<StopOutput> {
    if eval_every == 0 {
        return Err(Error::config("eval-every", "must be at least 1"));
    }
    let mut state = state.clone();
    let frame_len = floor_pow(state.hp.episodes, 0.5).max(1);
    let mut rng = run_rng(seed);
    let mut acct = Accounting {
        v_star: baseline,
        rho: spec.rho(),
        regret: 0.0,
        violation: 0.0,
        current: (0.0, 0.0),
    };
    let mut rows = Vec::with_capacity(extra_episodes);
    let mut cbar = 0.0;
    let mut in_frame = 0usize;
    let mut frames = 0usize;

    for k in 1..=extra_episodes {
        let z = state.z;
        if (k - 1) % eval_every == 0 {
            acct.current = policy_value(spec, &state.greedy_policy())?;
        }
        let mut x = spec.sample_initial(&mut rng);
        let (mut reward, mut utility) = (0.0, 0.0);
        for h in 0..spec.horizon() {
            let a = state.select_action(h, x);
            if h == 0 {
                cbar += state.c_at(0, x, a);
            }
            reward += spec.reward(h, x, a);
            utility += spec.utility(h, x, a);
            x = spec.sample_next(h, x, a, &mut rng);
        }
        in_frame += 1;
        if in_frame == frame_len {
            state.z = (state.z + state.rho + state.hp.epsilon - cbar / frame_len as f64).max(0.0);
            cbar = 0.0;
            in_frame = 0;
            frames += 1;
        }
        rows.push(acct.row(k, z, reward, utility));
    }

    Ok(StopOutput {
        metrics: RunMetrics {
            header: RunHeader {
                seed,
                hyperparameters: state.hp.clone(),
                baseline_objective: baseline,
                rho: spec.rho(),
                eval_every,
                phase: "stop".into(),
            },
            rows,
            frames,
        },
        state,
    })
}

/// Counts sampled points where the learner's pseudo-Q value falls below the
/// pseudo-Q value of the optimal tightened-LP policy at the same queue.
#[derive(Debug, Clone)]
pub struct OverestimationAudit {
    star: ValueTables,
    stride: usize,
    sampled: u64,
    under: u64,
}

impl OverestimationAudit {
    /// `sample_rate` in `(0, 1]`: every `round(1/sample_rate)`-th episode is
    /// audited over all `(h, x, a)`.
    pub fn new(spec: &CmdpSpec, epsilon: f64, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must lie in (0, 1], got {sample_rate}"
            )));
        }
        let (_, pi) = optimal_policy(spec, epsilon)?;
        let star = policy_eval(spec, &pi)?;
        Ok(OverestimationAudit {
            star,
            stride: (1.0 / sample_rate).round().max(1.0) as usize,
            sampled: 0,
            under: 0,
        })
    }

    pub fn audit(&mut self, state: &LearnerState) {
        let lambda = state.multiplier();
        for (i, (&q, &c)) in state.q.iter().zip(&state.c).enumerate() {
            let target = self.star.q[i] + lambda * self.star.c[i];
            let learned = q + lambda * c;
            self.sampled += 1;
            if learned < target - 1e-9 {
                self.under += 1;
            }
        }
    }

    pub fn sampled(&self) -> u64 {
        self.sampled
    }

    pub fn fraction(&self) -> f64 {
        if self.sampled == 0 {
            0.0
        } else {
            self.under as f64 / self.sampled as f64
        }
    }
}

impl EpisodeObserver for OverestimationAudit {
    fn episode_start(&mut self, k: usize, state: &LearnerState) {
        if (k - 1) % self.stride == 0 {
            self.audit(state);
        }
    }
}

/// Audit a stored history of episode-start states.
pub fn overestimation_audit<'a>(
    history: impl IntoIterator<Item = &'a LearnerState>,
    spec: &CmdpSpec,
    epsilon: f64,
    sample_rate: f64,
) -> Result<f64> {
    let mut audit = OverestimationAudit::new(spec, epsilon, sample_rate)?;
    for (i, state) in history.into_iter().enumerate() {
        audit.episode_start(i + 1, state);
    }
    Ok(audit.fraction())
}
