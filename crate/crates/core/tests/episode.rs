use pedcross::env::{REWARD_BOUND, TickRow};
use pedcross::metrics::{aggregate, classify_crossing, CrossingClass};
use pedcross::ppo::{greedy_rollout, train, Checkpoint, ParamSampling};
use pedcross::rng::rng_from_seed;
use pedcross::scenario::{sample_training_scenario, ScenarioTable};
use pedcross::{EnvConfig, NonPolicyParams, PedestrianEnv, ScenarioSpec, TerminalState, TrainConfig, Variant};
use proptest::prelude::*;
use rand::Rng as _;

fn run_actions(
    env: &mut PedestrianEnv,
    spec: ScenarioSpec,
    params: NonPolicyParams,
    variant: Variant,
    seed: u64,
    actions: &[usize],
) -> Vec<f64> {
    env.reset(spec, params, variant, seed).unwrap();
    let mut rewards = Vec::new();
    let mut i = 0;
    while !env.is_done() {
        let a = actions[i % actions.len()];
        rewards.push(env.step(a).unwrap().reward);
        i += 1;
    }
    rewards
}

fn tick_sum(ticks: &[TickRow], f: impl Fn(&TickRow) -> f64) -> f64 {
    ticks.iter().map(f).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn episode_log_is_consistent(
        scen_seed in any::<u64>(),
        ep_seed in any::<u64>(),
        v in 0usize..3,
        actions in prop::collection::vec(0usize..21, 1..12),
    ) {
        let mut rng = rng_from_seed(scen_seed);
        let spec = sample_training_scenario(&mut rng);
        let params = NonPolicyParams::sample_uniform(&mut rng);
        let variant = Variant::ALL[v];
        let mut env = PedestrianEnv::new(EnvConfig::default()).unwrap();
        let rewards = run_actions(&mut env, spec, params, variant, ep_seed, &actions);
        let rec = env.record();

        prop_assert!(rec.outcome.is_terminal());
        prop_assert!(rec.ticks.last().unwrap().t <= env.config().timeout + 1e-9);
        prop_assert_eq!(rec.decisions as usize, rewards.len());
        for r in &rewards {
            prop_assert!(r.abs() <= REWARD_BOUND + 1e-12);
        }
        // per-tick components add up to the episode totals and to the returns seen by the agent
        let total: f64 = rewards.iter().sum();
        prop_assert!((tick_sum(&rec.ticks, |t| t.r_total) - total).abs() < 1e-9);
        prop_assert!((rec.totals.total() - total).abs() < 1e-9);
        prop_assert!((tick_sum(&rec.ticks, |t| t.r_effort) - rec.totals.effort).abs() < 1e-9);
        prop_assert!((tick_sum(&rec.ticks, |t| t.r_looming) - rec.totals.looming).abs() < 1e-9);

        // pedestrian never walks backwards, speed stays within the action range
        let mut prev = f64::NEG_INFINITY;
        for t in &rec.ticks {
            prop_assert!(t.ped_position >= prev - 1e-12);
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&t.ped_speed));
            prev = t.ped_position;
        }

        match classify_crossing(&rec) {
            CrossingClass::NoCross => prop_assert!(rec.outcome != TerminalState::Crossed),
            _ => prop_assert_eq!(rec.outcome, TerminalState::Crossed),
        }

        // replay with the same seed is identical
        let mut env2 = PedestrianEnv::new(EnvConfig::default()).unwrap();
        let again = run_actions(&mut env2, spec, params, variant, ep_seed, &actions);
        prop_assert_eq!(rewards, again);
        prop_assert_eq!(rec, env2.record());
    }

    #[test]
    fn aggregate_counts_every_episode(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = rng_from_seed(seed);
        let table = ScenarioTable::bundled();
        let specs = table.day_night_specs().unwrap();
        let mut env = PedestrianEnv::new(EnvConfig::default()).unwrap();
        let mut records = Vec::new();
        for i in 0..n {
            let spec = specs[rng.random_range(0..specs.len())];
            let a = rng.random_range(0..21);
            run_actions(&mut env, spec, NonPolicyParams::zeros(), Variant::SM, i as u64, &[a]);
            records.push(env.record());
        }
        let table = aggregate(&records);
        let counted: usize = table.conditions.values().map(|m| m.n).sum();
        prop_assert_eq!(counted, n);
        for m in table.conditions.values() {
            prop_assert_eq!(m.n, m.n_ny + m.n_y);
            if let Some(g) = m.g() {
                prop_assert!((0.0..=1.0).contains(&g));
            }
        }
    }
}

#[test]
fn trained_checkpoint_round_trips_and_replays() {
    let config = TrainConfig {
        total_env_steps: 1024,
        rollout_len: 128,
        n_envs: 2,
        minibatch_size: 64,
        epochs: 2,
        params: ParamSampling::Uniform,
        ..TrainConfig::default()
    };
    let a = train(Variant::SM, &config, 5).unwrap();
    let b = train(Variant::SM, &config, 5).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.curve.len(), 4);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    a.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), a.checkpoint.to_bytes());

    let spec = ScenarioTable::bundled().specs(false).unwrap()[0];
    let params = NonPolicyParams::from_array([2.0, 4.0, 1.0, 1.0, 1.0]);
    let env = EnvConfig::default();
    let r1 = greedy_rollout(&a.checkpoint, spec, params, 17, &env).unwrap();
    let r2 = greedy_rollout(&loaded, spec, params, 17, &env).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.variant, Variant::SM);
}

#[test]
fn checkpoint_rejects_foreign_action_set() {
    let config = TrainConfig { total_env_steps: 256, rollout_len: 128, n_envs: 2, epochs: 1, ..TrainConfig::default() };
    let ck = train(Variant::S, &config, 0).unwrap().checkpoint;
    let env = EnvConfig { action_set: pedcross::ActionSet::literal(), ..EnvConfig::default() };
    let spec = ScenarioTable::bundled().specs(false).unwrap()[0];
    assert!(greedy_rollout(&ck, spec, NonPolicyParams::zeros(), 0, &env).is_err());
}
