//! Command-line front end: build environments, solve baselines, run learning
//! experiments and summarize their CSV output.
//!
//! Every `run` flag has a config-file key of the same (kebab-case) name;
//! flags win over file values.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmdp::CmdpSpec;
use crate::envs::{self, GridWorldConfig};
use crate::error::{Error, Result};
use crate::harness::{self, RunMetrics, RunOptions};
use crate::learner::{HyperParams, Mode, Overrides};
use crate::lp;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

/// Default size and instance seed of `--env random`.
const RANDOM_DEFAULT: (usize, usize, usize, u64) = (3, 2, 3, 11);

#[derive(Debug, Parser)]
#[command(
    name = "tripleq",
    version,
    about = "Triple-Q constrained RL experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the online learner and write per-seed CSV + JSON files.
    Run(RunArgs),
    /// Solve the (tightened) LP baseline and print it as JSON.
    Baseline(BaselineArgs),
    /// Print the environment's model as JSON.
    Env(EnvArgs),
    /// Summarize finished runs.
    Compare(CompareArgs),
}

/// Seed list: `7`, `1..5` (inclusive) or `1,4,9`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Seeds(pub Vec<u64>);

impl std::str::FromStr for Seeds {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("seed", format!("cannot parse `{s}`"));
        let s = s.trim();
        let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b
                .trim()
                .trim_start_matches('=')
                .parse()
                .map_err(|_| bad())?;
            if b < a {
                return Err(Error::config("seed", format!("empty range `{s}`")));
            }
            (a..=b).collect()
        } else {
            s.split(',')
                .map(|p| p.trim().parse().map_err(|_| bad()))
                .collect::<Result<_>>()?
        };
        if seeds.is_empty() {
            return Err(bad());
        }
        Ok(Seeds(seeds))
    }
}

impl<'de> Deserialize<'de> for Seeds {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(u64),
            Many(Vec<u64>),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::One(s) => Ok(Seeds(vec![s])),
            Raw::Many(v) if !v.is_empty() => Ok(Seeds(v)),
            Raw::Many(_) => Err(serde::de::Error::custom("seed list is empty")),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Environment flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EnvArgs {
    /// chain | gridworld | random | path to a model JSON file
    #[arg(long)]
    pub env: Option<String>,
    /// Grid world cost budget (utility threshold becomes H - budget).
    #[arg(long)]
    pub budget: Option<f64>,
    /// Grid world slip probability.
    #[arg(long)]
    pub slip: Option<f64>,
    /// Horizon of the grid world or random instance.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Random instance: number of states.
    #[arg(long)]
    pub states: Option<usize>,
    /// Random instance: number of actions.
    #[arg(long)]
    pub actions: Option<usize>,
    /// Random instance: generator seed.
    #[arg(long)]
    pub env_seed: Option<u64>,
    /// Replace the model's utility threshold.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Full grid layout (config file only).
    #[arg(skip)]
    pub grid: Option<GridWorldConfig>,
}

#[derive(Debug, Clone, Default, Args, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub env: EnvArgs,
    /// Number of learning episodes K.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// `7`, `1..5` or `1,2,3`.
    #[arg(long)]
    pub seed: Option<Seeds>,
    /// theory | practical
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub iota: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub chi: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub frame_len: Option<usize>,
    /// Exact policy evaluation cadence (default 1, gridworld 100).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Episodes of frozen-table stop mode after learning.
    #[arg(long)]
    pub stop_episodes: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// LP tightening.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Include the extracted policy in the output.
    #[arg(long)]
    pub policy: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Run CSV files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Trailing window for the mean columns.
    #[arg(long, default_value_t = 1000)]
    pub window: usize,
}

/// Where the model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSource {
    Chain,
    Gridworld(GridWorldConfig),
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
        seed: u64,
    },
    File(PathBuf),
}

impl EnvSource {
    pub fn build(&self) -> Result<CmdpSpec> {
        match self {
            EnvSource::Chain => Ok(envs::chain_cmdp()),
            EnvSource::Gridworld(cfg) => envs::grid_world(cfg),
            EnvSource::Random {
                states,
                actions,
                horizon,
                seed,
            } => Ok(envs::random_cmdp(*states, *actions, *horizon, *seed)),
            EnvSource::File(p) => CmdpSpec::from_json(&fs::read_to_string(p)?),
        }
    }

    fn default_eval_every(&self) -> usize {
        match self {
            EnvSource::Gridworld(_) => 100,
            _ => 1,
        }
    }
}

/// Model plus an optional threshold override.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvChoice {
    pub source: EnvSource,
    pub rho: Option<f64>,
}

impl EnvChoice {
    pub fn from_args(a: &EnvArgs) -> Result<Self> {
        let name = a
            .env
            .as_deref()
            .ok_or_else(|| Error::config("env", "required"))?;
        let positive = |field: &'static str, v: Option<usize>, default: usize| match v {
            Some(0) => Err(Error::config(field, "must be positive")),
            Some(v) => Ok(v),
            None => Ok(default),
        };
        let source = match name {
            "chain" => EnvSource::Chain,
            "gridworld" | "grid" => {
                let mut cfg = a.grid.clone().unwrap_or_default();
                if let Some(b) = a.budget {
                    cfg.cost_budget = b;
                }
                if let Some(s) = a.slip {
                    cfg.slip_prob = s;
                }
                cfg.horizon = positive("horizon", a.horizon, cfg.horizon)?;
                cfg.validate()?;
                EnvSource::Gridworld(cfg)
            }
            "random" => {
                let (s, ac, h, seed) = RANDOM_DEFAULT;
                EnvSource::Random {
                    states: positive("states", a.states, s)?,
                    actions: positive("actions", a.actions, ac)?,
                    horizon: positive("horizon", a.horizon, h)?,
                    seed: a.env_seed.unwrap_or(seed),
                }
            }
            path => {
                let p = PathBuf::from(path);
                if !p.is_file() {
                    return Err(Error::config(
                        "env",
                        format!("`{path}` is neither chain, gridworld, random nor a file"),
                    ));
                }
                EnvSource::File(p)
            }
        };
        if let Some(r) = a.rho {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::config(
                    "rho",
                    format!("must be finite and >= 0, got {r}"),
                ));
            }
        }
        Ok(EnvChoice { source, rho: a.rho })
    }

    /// The model with its threshold replaced. A threshold above `H` cannot
    /// be met by any policy and is reported as infeasible.
    pub fn build(&self) -> Result<CmdpSpec> {
        let spec = self.source.build()?;
        match self.rho {
            None => Ok(spec),
            Some(r) if r > spec.horizon() as f64 => Err(Error::Infeasible(r)),
            Some(r) => spec.with_rho(r),
        }
    }
}

/// Fully resolved `run` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvChoice,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    pub overrides: Overrides,
    pub eval_every: usize,
    pub stop_episodes: Option<usize>,
    pub out: PathBuf,
}

macro_rules! prefer_flags {
    ($flags:expr, $file:expr; $($f:ident)+) => {
        $( if $flags.$f.is_none() { $flags.$f = $file.$f.take(); } )+
    };
}

impl ExperimentConfig {
    /// Merge flags over the config file (if any) and validate.
    pub fn resolve(mut args: RunArgs) -> Result<Self> {
        if let Some(path) = args.config.clone() {
            let text = fs::read_to_string(&path)?;
            let mut file: RunArgs = toml::from_str(&text).map_err(|e| {
                Error::config("config", format!("{}: {}", path.display(), e.message()))
            })?;
            prefer_flags!(args, file; episodes seed mode iota epsilon chi eta frame_len
                eval_every stop_episodes out);
            prefer_flags!(args.env, file.env; env budget slip horizon states actions env_seed rho grid);
        }
        Self::from_args(args)
    }

    fn from_args(a: RunArgs) -> Result<Self> {
        let env = EnvChoice::from_args(&a.env)?;
        let episodes = match a.episodes {
            None => return Err(Error::config("episodes", "required")),
            Some(0) => return Err(Error::config("episodes", "must be at least 1")),
            Some(k) => k,
        };
        let mode = a.mode.unwrap_or(Mode::Practical);
        let overrides = Overrides {
            iota: a.iota,
            epsilon: a.epsilon,
            chi: a.chi,
            eta: a.eta,
            frame_len: a.frame_len,
        };
        if mode == Mode::Theory && !overrides.is_empty() {
            return Err(Error::config(
                "mode",
                "hyperparameter overrides are only allowed in practical mode",
            ));
        }
        let eval_every = a
            .eval_every
            .unwrap_or_else(|| env.source.default_eval_every());
        if eval_every == 0 {
            return Err(Error::config("eval-every", "must be at least 1"));
        }
        if a.stop_episodes == Some(0) {
            return Err(Error::config("stop-episodes", "must be at least 1"));
        }
        Ok(ExperimentConfig {
            env,
            episodes,
            seeds: a.seed.map(|s| s.0).unwrap_or_else(|| vec![0]),
            mode,
            overrides,
            eval_every,
            stop_episodes: a.stop_episodes,
            out: a.out.unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    pub fn hyperparams(&self, spec: &CmdpSpec) -> Result<HyperParams> {
        HyperParams::for_spec(spec, self.episodes, self.mode).with_overrides(&self.overrides)
    }
}

/// Files written for one seed.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub seed: u64,
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub metrics: RunMetrics,
    pub stop: Option<RunMetrics>,
}

fn write_metrics(out: &Path, stem: &str, seed: u64, m: &RunMetrics) -> Result<(PathBuf, PathBuf)> {
    let csv = out.join(format!("{stem}_seed{seed}.csv"));
    let json = out.join(format!("{stem}_seed{seed}.json"));
    m.write_csv_file(&csv)?;
    fs::write(&json, m.sidecar_json()?)?;
    Ok((csv, json))
}

/// Run every seed (in parallel) and write `run_seed{N}.csv/.json`, plus
/// `stop_seed{N}.*` when stop mode is requested.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Vec<RunArtifact>> {
    let spec = cfg.env.build()?;
    let hp = cfg.hyperparams(&spec)?;
    let baseline = harness::baseline_objective(&spec)?;
    fs::create_dir_all(&cfg.out)?;
    let opts = RunOptions {
        eval_every: cfg.eval_every,
        keep_snapshots: false,
    };
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let run = harness::run_learning(&spec, &hp, seed, baseline, &opts, &mut ())?;
            let (csv, sidecar) = write_metrics(&cfg.out, "run", seed, &run.metrics)?;
            let stop = match cfg.stop_episodes {
                Some(n) => {
                    let s = harness::run_stop_mode(
                        &run.state,
                        &spec,
                        n,
                        seed,
                        baseline,
                        cfg.eval_every,
                    )?;
                    write_metrics(&cfg.out, "stop", seed, &s.metrics)?;
                    Some(s.metrics)
                }
                None => None,
            };
            Ok(RunArtifact {
                seed,
                csv,
                sidecar,
                metrics: run.metrics,
                stop,
            })
        })
        .collect()
}

/// Map an error to the documented exit status.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::InvalidArgument(_)
        | Error::InvalidModel(_)
        | Error::Dimension { .. } => EXIT_CONFIG,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::IterationCap { .. } | Error::Numerical(_) | Error::EnumerationGuard { .. } => {
            EXIT_SOLVER
        }
        Error::OutOfRange { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => EXIT_FAILURE,
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

pub fn cmd_run(cfg: &ExperimentConfig) -> i32 {
    match run_config(cfg) {
        Ok(arts) => {
            for a in &arts {
                let m = &a.metrics;
                println!(
                    "seed {}: {} episodes, regret {:.4}, violation {:.4} -> {}",
                    a.seed,
                    m.rows.len(),
                    m.final_regret(),
                    m.final_violation(),
                    a.csv.display()
                );
            }
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}

/// Baseline LP as a JSON value. Infeasibility is an answer, not an error.
pub fn baseline_json(
    env: &EnvChoice,
    epsilon: f64,
    with_policy: bool,
) -> Result<serde_json::Value> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::config(
            "epsilon",
            format!("must be finite and >= 0, got {epsilon}"),
        ));
    }
    let spec = env.source.build()?;
    let threshold = env.rho.unwrap_or(spec.rho()) + epsilon;
    let sol = lp::solve_lp_threshold(&spec, threshold)?;
    let mut out = serde_json::json!({
        "objective": sol.objective,
        "utility_value": sol.utility_value,
        "status": sol.status,
    });
    if with_policy {
        if let Some(occ) = &sol.occupancy {
            out["policy"] = serde_json::to_value(lp::occupancy_to_policy(occ))?;
        }
    }
    Ok(out)
}

pub fn cmd_baseline(env: &EnvChoice, epsilon: f64, with_policy: bool) -> i32 {
    match baseline_json(env, epsilon, with_policy) {
        Ok(v) => {
            println!("{v}");
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}

fn cmd_env(a: &EnvArgs) -> Result<()> {
    let spec = EnvChoice::from_args(a)?.build()?;
    println!("{}", spec.to_json()?);
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    if a.window == 0 {
        return Err(Error::config("window", "must be at least 1"));
    }
    println!("file,episodes,regret_cum,violation_cum,mean_reward,mean_utility,mean_v,mean_w");
    for f in &a.files {
        let rows = RunMetrics::read_csv(f)?;
        let Some(last) = rows.last() else {
            return Err(Error::InvalidArgument(format!(
                "{} has no rows",
                f.display()
            )));
        };
        let tail = &rows[rows.len().saturating_sub(a.window)..];
        let mean = |g: fn(&harness::MetricsRow) -> f64| {
            tail.iter().map(g).sum::<f64>() / tail.len() as f64
        };
        println!(
            "{},{},{},{},{},{},{},{}",
            f.display(),
            rows.len(),
            last.regret_cum,
            last.violation_cum,
            mean(|r| r.reward_realized),
            mean(|r| r.utility_realized),
            mean(|r| r.v_pik),
            mean(|r| r.w_pik),
        );
    }
    Ok(())
}

/// Parse `args` (program name first) and run; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(a) => match ExperimentConfig::resolve(a) {
            Ok(cfg) => cmd_run(&cfg),
            Err(e) => report(&e),
        },
        Command::Baseline(a) => match EnvChoice::from_args(&a.env) {
            Ok(env) => cmd_baseline(&env, a.epsilon, a.policy),
            Err(e) => report(&e),
        },
        Command::Env(a) => cmd_env(&a).map_or_else(|e| report(&e), |_| EXIT_OK),
        Command::Compare(a) => cmd_compare(&a).map_or_else(|e| report(&e), |_| EXIT_OK),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_forms() {
        assert_eq!("7".parse::<Seeds>().unwrap().0, vec![7]);
        assert_eq!("1..5".parse::<Seeds>().unwrap().0, vec![1, 2, 3, 4, 5]);
        assert_eq!("1..=3".parse::<Seeds>().unwrap().0, vec![1, 2, 3]);
        assert_eq!("4, 9".parse::<Seeds>().unwrap().0, vec![4, 9]);
        assert!("5..1".parse::<Seeds>().is_err());
        assert!("x".parse::<Seeds>().is_err());
    }

    #[test]
    fn missing_episodes_is_config_error() {
        let a = RunArgs {
            env: EnvArgs {
                env: Some("chain".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        let e = ExperimentConfig::resolve(a).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        assert!(e.to_string().contains("episodes"));
    }

    #[test]
    fn theory_rejects_overrides() {
        let a = RunArgs {
            env: EnvArgs {
                env: Some("chain".into()),
                ..Default::default()
            },
            episodes: Some(10),
            mode: Some(Mode::Theory),
            iota: Some(2.0),
            ..Default::default()
        };
        assert!(matches!(
            ExperimentConfig::resolve(a),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn rho_above_horizon_is_infeasible() {
        let env = EnvChoice {
            source: EnvSource::Chain,
            rho: Some(1.5),
        };
        assert_eq!(exit_code(&env.build().unwrap_err()), EXIT_INFEASIBLE);
        let v = baseline_json(&env, 0.0, false).unwrap();
        assert_eq!(v["status"], "infeasible");
    }
}
