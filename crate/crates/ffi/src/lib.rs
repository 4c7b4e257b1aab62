//! C ABI over `tripleq-core`.
//!
//! Models and learners are opaque heap handles released with the matching
//! `*_free`. Fallible calls return a [`TqStatus`]; on failure a message is
//! kept per thread and can be read with [`tq_last_error`]. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::c_char;
use rand_chacha::ChaCha8Rng;
use tripleq::envs::{chain_cmdp, grid_world, random_cmdp, GridWorldConfig};
use tripleq::harness::{run_experiment, run_rng};
use tripleq::learner::{HyperParams, LearnerState, Mode, ALPHA};
use tripleq::lp::solve_cmdp_lp;
use tripleq::{CmdpSpec, Error};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    Infeasible = 4,
    Solver = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TqMode {
    Practical = 0,
    Theory = 1,
}

/// Learner hyperparameters. Fill with [`tq_hyperparams_default`]; in
/// practical mode any field may then be changed, in theory mode none.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TqHyperParams {
    pub episodes: usize,
    pub chi: f64,
    pub eta: f64,
    pub iota: f64,
    pub epsilon: f64,
    pub frame_len: usize,
    pub mode: TqMode,
}

/// Opaque model handle.
pub struct TqSpec {
    spec: CmdpSpec,
}

/// Opaque learner handle: tables, queue and the learner's own RNG.
pub struct TqLearner {
    state: LearnerState,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::OutOfRange { .. } => {
                TqStatus::InvalidArgument
            }
            Error::InvalidModel(_) | Error::Dimension { .. } | Error::Json(_) => {
                TqStatus::InvalidModel
            }
            Error::Infeasible(_) => TqStatus::Infeasible,
            Error::IterationCap { .. } | Error::Numerical(_) | Error::EnumerationGuard { .. } => {
                TqStatus::Solver
            }
            Error::Io(_) | Error::Csv(_) => TqStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn call(f: impl FnOnce() -> Result<(), Failure>) -> TqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TqStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside tripleq".into());
            TqStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TqStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn string_out(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(TqStatus::InvalidArgument, "string contains NUL".into()))
}

fn spec_handle(spec: CmdpSpec) -> *mut TqSpec {
    Box::into_raw(Box::new(TqSpec { spec }))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn tq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by the library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a model from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_spec_from_json(json: *const c_char, out: *mut *mut TqSpec) -> TqStatus {
    call(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(TqStatus::InvalidArgument, e.to_string()))?;
        let spec = CmdpSpec::from_json(text)?;
        put(out, spec_handle(spec), "out")
    })
}

/// The two-action chain benchmark.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_spec_chain(out: *mut *mut TqSpec) -> TqStatus {
    call(|| put(out, spec_handle(chain_cmdp()), "out"))
}

/// Default grid world with the given cost budget and slip probability.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_spec_gridworld(
    budget: f64,
    slip: f64,
    out: *mut *mut TqSpec,
) -> TqStatus {
    call(|| {
        let cfg = GridWorldConfig {
            cost_budget: budget,
            slip_prob: slip,
            ..Default::default()
        };
        put(out, spec_handle(grid_world(&cfg)?), "out")
    })
}

/// Seeded random instance.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_spec_random(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    seed: u64,
    out: *mut *mut TqSpec,
) -> TqStatus {
    call(|| {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Failure(
                TqStatus::InvalidArgument,
                "sizes must be positive".into(),
            ));
        }
        put(
            out,
            spec_handle(random_cmdp(num_states, num_actions, horizon, seed)),
            "out",
        )
    })
}

/// # Safety
/// `spec` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tq_spec_free(spec: *mut TqSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Sizes and threshold of a model. Any output pointer may be NULL.
///
/// # Safety
/// `spec` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_spec_shape(
    spec: *const TqSpec,
    num_states: *mut usize,
    num_actions: *mut usize,
    horizon: *mut usize,
    rho: *mut f64,
) -> TqStatus {
    call(|| {
        let s = &deref(spec, "spec")?.spec;
        for (p, v) in [
            (num_states, s.num_states()),
            (num_actions, s.num_actions()),
            (horizon, s.horizon()),
        ] {
            if !p.is_null() {
                p.write(v);
            }
        }
        if !rho.is_null() {
            rho.write(s.rho());
        }
        Ok(())
    })
}

/// Serialize a model; free the result with [`tq_string_free`].
///
/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_spec_to_json(spec: *const TqSpec, out: *mut *mut c_char) -> TqStatus {
    call(|| {
        let s = deref(spec, "spec")?;
        put(out, string_out(s.spec.to_json()?)?, "out")
    })
}

/// Optimal value of the LP baseline tightened by `epsilon`. An infeasible
/// problem sets `*feasible = false` and returns `Ok`.
///
/// # Safety
/// `spec` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_baseline(
    spec: *const TqSpec,
    epsilon: f64,
    objective: *mut f64,
    feasible: *mut bool,
) -> TqStatus {
    call(|| {
        let s = deref(spec, "spec")?;
        let sol = solve_cmdp_lp(&s.spec, epsilon)?;
        put(feasible, sol.objective.is_some(), "feasible")?;
        put(objective, sol.objective.unwrap_or(f64::NAN), "objective")
    })
}

fn to_core(p: &TqHyperParams) -> HyperParams {
    HyperParams {
        episodes: p.episodes,
        chi: p.chi,
        eta: p.eta,
        iota: p.iota,
        alpha_exp: ALPHA,
        frame_len: p.frame_len,
        epsilon: p.epsilon,
        mode: match p.mode {
            TqMode::Practical => Mode::Practical,
            TqMode::Theory => Mode::Theory,
        },
    }
}

fn from_core(hp: &HyperParams) -> TqHyperParams {
    TqHyperParams {
        episodes: hp.episodes,
        chi: hp.chi,
        eta: hp.eta,
        iota: hp.iota,
        epsilon: hp.epsilon,
        frame_len: hp.frame_len,
        mode: match hp.mode {
            Mode::Practical => TqMode::Practical,
            Mode::Theory => TqMode::Theory,
        },
    }
}

fn resolve(spec: &CmdpSpec, p: &TqHyperParams) -> Result<HyperParams, Failure> {
    let hp = to_core(p);
    if p.mode == TqMode::Theory && hp != HyperParams::for_spec(spec, p.episodes, Mode::Theory) {
        return Err(Failure(
            TqStatus::InvalidArgument,
            "theory mode takes the formula values; change parameters only in practical mode".into(),
        ));
    }
    hp.validate()?;
    Ok(hp)
}

/// Default hyperparameters for `episodes` learning episodes.
///
/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_hyperparams_default(
    spec: *const TqSpec,
    episodes: usize,
    mode: TqMode,
    out: *mut TqHyperParams,
) -> TqStatus {
    call(|| {
        let s = deref(spec, "spec")?;
        if episodes == 0 {
            return Err(Failure(
                TqStatus::InvalidArgument,
                "episodes must be at least 1".into(),
            ));
        }
        let m = match mode {
            TqMode::Practical => Mode::Practical,
            TqMode::Theory => Mode::Theory,
        };
        put(
            out,
            from_core(&HyperParams::for_spec(&s.spec, episodes, m)),
            "out",
        )
    })
}

/// Fresh learner for `spec`, sampling with its own generator seeded by `seed`.
///
/// # Safety
/// `spec` and `params` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_learner_new(
    spec: *const TqSpec,
    params: *const TqHyperParams,
    seed: u64,
    out: *mut *mut TqLearner,
) -> TqStatus {
    call(|| {
        let s = deref(spec, "spec")?;
        let hp = resolve(&s.spec, deref(params, "params")?)?;
        let state = LearnerState::init(&s.spec, hp)?;
        let learner = Box::new(TqLearner {
            state,
            rng: run_rng(seed),
        });
        put(out, Box::into_raw(learner), "out")
    })
}

/// # Safety
/// `learner` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tq_learner_free(learner: *mut TqLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

fn check_index(what: &'static str, index: usize, limit: usize) -> Result<(), Failure> {
    if index >= limit {
        return Err(Error::OutOfRange { what, index, limit }.into());
    }
    Ok(())
}

/// Greedy pseudo-Q action at zero-based step `h` in state `x`.
///
/// # Safety
/// `learner` must be a live handle; `action` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_learner_select_action(
    learner: *const TqLearner,
    h: usize,
    x: usize,
    action: *mut usize,
) -> TqStatus {
    call(|| {
        let l = &deref(learner, "learner")?.state;
        check_index("step", h, l.horizon)?;
        check_index("state", x, l.num_states)?;
        put(action, l.select_action(h, x), "action")
    })
}

/// One table update of `(h, x, a)` with reward `r`, utility `g` and the
/// next-step estimates (pass 0 at the last step).
///
/// # Safety
/// `learner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tq_learner_update(
    learner: *mut TqLearner,
    h: usize,
    x: usize,
    a: usize,
    r: f64,
    g: f64,
    v_next: f64,
    w_next: f64,
) -> TqStatus {
    call(|| {
        let l = deref_mut(learner, "learner")?;
        l.state.update_step(h, x, a, r, g, v_next, w_next)?;
        Ok(())
    })
}

/// Close an episode whose first step read `c1_first`; reports whether a
/// frame boundary fired. `frame_fired` may be NULL.
///
/// # Safety
/// `learner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tq_learner_end_episode(
    learner: *mut TqLearner,
    c1_first: f64,
    frame_fired: *mut bool,
) -> TqStatus {
    call(|| {
        let l = deref_mut(learner, "learner")?;
        let fired = l.state.end_episode(c1_first);
        if !frame_fired.is_null() {
            frame_fired.write(fired);
        }
        Ok(())
    })
}

/// Run one full learning episode against `spec` using the learner's
/// generator. `reward` and `utility` may be NULL.
///
/// # Safety
/// Both handles must be live; `spec` must match the learner's sizes.
#[no_mangle]
pub unsafe extern "C" fn tq_learner_run_episode(
    learner: *mut TqLearner,
    spec: *const TqSpec,
    reward: *mut f64,
    utility: *mut f64,
) -> TqStatus {
    call(|| {
        let l = deref_mut(learner, "learner")?;
        let s = &deref(spec, "spec")?.spec;
        if (s.num_states(), s.num_actions(), s.horizon())
            != (l.state.num_states, l.state.num_actions, l.state.horizon)
        {
            return Err(Failure(
                TqStatus::InvalidArgument,
                "model and learner sizes differ".into(),
            ));
        }
        let o = l.state.run_episode(s, &mut l.rng);
        if !reward.is_null() {
            reward.write(o.reward);
        }
        if !utility.is_null() {
            utility.write(o.utility);
        }
        Ok(())
    })
}

/// Write the greedy deterministic policy, `actions[h * S + x]`, into a
/// buffer of `len >= H * S` entries.
///
/// # Safety
/// `learner` must be a live handle; `actions` must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn tq_learner_snapshot(
    learner: *const TqLearner,
    actions: *mut usize,
    len: usize,
) -> TqStatus {
    call(|| {
        let l = &deref(learner, "learner")?.state;
        let need = l.horizon * l.num_states;
        if actions.is_null() {
            return Err(null("actions"));
        }
        if len < need {
            return Err(Failure(
                TqStatus::InvalidArgument,
                format!("buffer holds {len} entries, {need} needed"),
            ));
        }
        let buf = std::slice::from_raw_parts_mut(actions, need);
        for h in 0..l.horizon {
            for x in 0..l.num_states {
                buf[h * l.num_states + x] = l.select_action(h, x);
            }
        }
        Ok(())
    })
}

/// Current virtual queue `Z` and table entries at `(h, x, a)`. Outputs may be NULL.
///
/// # Safety
/// `learner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tq_learner_values(
    learner: *const TqLearner,
    h: usize,
    x: usize,
    a: usize,
    q: *mut f64,
    c: *mut f64,
    z: *mut f64,
) -> TqStatus {
    call(|| {
        let l = &deref(learner, "learner")?.state;
        check_index("step", h, l.horizon)?;
        check_index("state", x, l.num_states)?;
        check_index("action", a, l.num_actions)?;
        for (p, v) in [(q, l.q_at(h, x, a)), (c, l.c_at(h, x, a)), (z, l.z)] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Serialize the learner state (without the generator); free with [`tq_string_free`].
///
/// # Safety
/// `learner` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tq_learner_to_json(
    learner: *const TqLearner,
    out: *mut *mut c_char,
) -> TqStatus {
    call(|| {
        let l = deref(learner, "learner")?;
        put(out, string_out(l.state.to_json()?)?, "out")
    })
}

/// Full experiment: solve the baseline, learn for `params.episodes`
/// episodes evaluating every `eval_every` episodes, and report the final
/// cumulative regret and violation. Either output may be NULL.
///
/// # Safety
/// `spec` and `params` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tq_run_experiment(
    spec: *const TqSpec,
    params: *const TqHyperParams,
    seed: u64,
    eval_every: usize,
    regret: *mut f64,
    violation: *mut f64,
) -> TqStatus {
    call(|| {
        let s = &deref(spec, "spec")?.spec;
        let hp = resolve(s, deref(params, "params")?)?;
        let m = run_experiment(s, &hp, seed, eval_every)?;
        if !regret.is_null() {
            regret.write(m.final_regret());
        }
        if !violation.is_null() {
            violation.write(m.final_violation());
        }
        Ok(())
    })
}
