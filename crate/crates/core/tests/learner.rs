use proptest::prelude::*;
use tripleq::envs::{chain_cmdp, random_cmdp};
use tripleq::harness::{run_learning, run_rng, run_stop_mode, EpisodeObserver, RunOptions};
use tripleq::learner::{
    bonus, learning_rate, EpisodeOutcome, HyperParams, LearnerState, Mode, Overrides,
};

/// Recomputes the queue from the first-step utility estimates and compares
/// with the learner after every boundary.
#[derive(Default)]
struct QueueReplay {
    z: f64,
    cbar: f64,
    episodes: usize,
    max_err: f64,
    boundaries: usize,
}

struct QueueCheck {
    replay: QueueReplay,
    rho: f64,
    epsilon: f64,
    horizon: f64,
    table_bound: f64,
    bad_tables: usize,
}

impl EpisodeObserver for QueueCheck {
    fn after_updates(&mut self, _k: usize, s: &LearnerState) {
        if s.q
            .iter()
            .chain(&s.c)
            .any(|v| !(*v >= 0.0 && *v <= self.table_bound))
        {
            self.bad_tables += 1;
        }
    }

    fn episode_end(&mut self, _k: usize, s: &LearnerState, o: &EpisodeOutcome) {
        let r = &mut self.replay;
        r.cbar += o.c1_first;
        r.episodes += 1;
        if o.frame_fired {
            r.z = (r.z + self.rho + self.epsilon - r.cbar / r.episodes as f64).max(0.0);
            r.max_err = r.max_err.max((r.z - s.z).abs());
            r.cbar = 0.0;
            r.episodes = 0;
            r.boundaries += 1;
            // Right after a boundary every entry is at most H.
            if s.q.iter().chain(&s.c).any(|v| *v > self.horizon) {
                self.bad_tables += 1;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn queue_and_table_invariants(s in 1usize..=4, a in 1usize..=3, h in 1usize..=4, seed in 0u64..1000, episodes in 50usize..600, theory in any::<bool>()) {
        let spec = random_cmdp(s, a, h, seed);
        let mode = if theory { Mode::Theory } else { Mode::Practical };
        let hp = HyperParams::for_spec(&spec, episodes, mode);
        let mut chk = QueueCheck {
            replay: QueueReplay::default(),
            rho: spec.rho(),
            epsilon: hp.epsilon,
            horizon: h as f64,
            // The H^2 sqrt(iota) bound relies on the formula values of iota and eta.
            table_bound: if theory { hp.table_bound(h) } else { f64::INFINITY },
            bad_tables: 0,
        };
        let out = run_learning(&spec, &hp, seed, 0.0, &RunOptions::default(), &mut chk).unwrap();
        prop_assert_eq!(chk.bad_tables, 0);
        prop_assert!(chk.replay.max_err < 1e-9);
        prop_assert_eq!(chk.replay.boundaries, out.state.frames_done);
        prop_assert_eq!(out.state.episodes_done, episodes);
        // The trailing partial frame is always closed.
        prop_assert_eq!(out.state.episode_in_frame, 0);
    }

    #[test]
    fn greedy_policy_agrees_with_select_action(seed in 0u64..1000, episodes in 1usize..300) {
        let spec = random_cmdp(3, 3, 3, seed);
        let hp = HyperParams::practical(episodes);
        let out = run_learning(&spec, &hp, seed, 0.0, &RunOptions::default(), &mut ()).unwrap();
        let pi = out.state.greedy_policy();
        for step in 0..3 {
            for x in 0..3 {
                let a = out.state.select_action(step, x);
                prop_assert_eq!(pi.prob(step, x, a), 1.0);
                let best = (0..3).map(|b| out.state.pseudo_value(step, x, b)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(out.state.pseudo_value(step, x, a), best);
                // Lowest index among ties.
                prop_assert!((0..a).all(|b| out.state.pseudo_value(step, x, b) < best));
            }
        }
    }
}

#[test]
fn manual_loop_replays_harness() {
    let spec = random_cmdp(3, 2, 4, 9);
    let hp = HyperParams::practical(500);
    let out = run_learning(&spec, &hp, 42, 0.0, &RunOptions::default(), &mut ()).unwrap();

    let mut state = LearnerState::init(&spec, hp).unwrap();
    let mut rng = run_rng(42);
    for _ in 0..500 {
        state.run_episode(&spec, &mut rng);
    }
    assert_eq!(state, out.state);
}

#[test]
fn state_json_round_trip() {
    let spec = chain_cmdp();
    let hp = HyperParams::practical(100);
    let out = run_learning(&spec, &hp, 3, 0.5, &RunOptions::default(), &mut ()).unwrap();
    let back = LearnerState::from_json(&out.state.to_json().unwrap()).unwrap();
    assert_eq!(back, out.state);
}

#[test]
fn schedule_values() {
    assert_eq!(learning_rate(1, 3.0).unwrap(), 1.0);
    assert!((learning_rate(5, 3.0).unwrap() - 0.5).abs() < 1e-15);
    assert!(learning_rate(0, 3.0).is_err());
    let hp = HyperParams::practical(1000);
    // b_1 = sqrt(H^2 iota) / 4 with iota = 1.
    assert!((bonus(1, &hp, 2).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn theory_mode_rejects_overrides() {
    let hp = HyperParams::for_spec(&chain_cmdp(), 1000, Mode::Theory);
    let o = Overrides {
        eta: Some(2.0),
        ..Default::default()
    };
    assert!(hp.with_overrides(&o).is_err());
}

#[test]
fn stop_mode_leaves_tables_untouched() {
    let spec = chain_cmdp();
    let hp = HyperParams::practical(400);
    let out = run_learning(&spec, &hp, 1, 0.5, &RunOptions::default(), &mut ()).unwrap();
    let stop = run_stop_mode(&out.state, &spec, 300, 2, 0.5, 1).unwrap();
    assert_eq!(stop.state.q, out.state.q);
    assert_eq!(stop.state.c, out.state.c);
    assert_eq!(stop.metrics.rows.len(), 300);
    assert_eq!(stop.metrics.frames, 300 / 20);
}
