//! Proximal policy optimization with a parameter-conditioned discrete policy.
//!
//! Separate tanh actor and critic networks (observation → 128 → 64), running
//! observation normalization, GAE, clipped surrogate updates with Adam and
//! global gradient-norm clipping. Everything runs on one thread and is
//! bit-reproducible for a given seed.

mod adam;
mod buffer;
mod checkpoint;
mod loss;
mod net;
mod normalize;
mod train;

pub use adam::{clip_grad_norm, grad_norm, Adam};
pub use buffer::{compute_gae, RolloutBuffer, Trajectory};
pub use checkpoint::{observation_layout_hash, Checkpoint, FORMAT_VERSION};
pub use loss::{
    clipped_surrogate, log_softmax, loss_and_grad, normalize_advantages, ActorCritic, LossCoefs,
    LossStats, Minibatch,
};
pub use net::{Linear, Mlp};
pub use normalize::RunningMeanStd;
pub use train::{train, train_with, CurveRow, ParamSampling, RolloutStats, TrainConfig, TrainOutcome, Trainer};

use crate::env::{EnvConfig, NonPolicyParams, PedestrianEnv};
use crate::error::{Error, Result};
use crate::metrics::EpisodeRecord;
use crate::scenario::ScenarioSpec;

/// Runs one episode choosing the argmax action at every decision.
pub fn greedy_rollout_in(
    env: &mut PedestrianEnv,
    checkpoint: &Checkpoint,
    spec: ScenarioSpec,
    params: NonPolicyParams,
    seed: u64,
) -> Result<EpisodeRecord> {
    if env.config().action_set != checkpoint.action_set {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} actions but the environment expects {}",
            checkpoint.action_set.len(),
            env.config().action_set.len()
        )));
    }
    let mut obs = env.reset(spec, params, checkpoint.variant, seed)?;
    while !env.is_done() {
        obs = env.step(checkpoint.greedy_action(&obs))?.observation;
    }
    Ok(env.record())
}

/// Greedy rollout in a fresh environment built from `env_config`.
pub fn greedy_rollout(
    checkpoint: &Checkpoint,
    spec: ScenarioSpec,
    params: NonPolicyParams,
    seed: u64,
    env_config: &EnvConfig,
) -> Result<EpisodeRecord> {
    let mut env = PedestrianEnv::new(env_config.clone())?;
    greedy_rollout_in(&mut env, checkpoint, spec, params, seed)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::env::{ActionSet, Observation, Variant, OBS_DIM};
    use crate::rng::rng_from_seed;

    fn tiny_checkpoint() -> Checkpoint {
        let config = TrainConfig {
            total_env_steps: 256,
            rollout_len: 32,
            n_envs: 4,
            epochs: 1,
            hidden: vec![16, 8],
            ..TrainConfig::default()
        };
        train(Variant::SM, &config, 3).unwrap().checkpoint
    }

    #[test]
    fn checkpoint_round_trip_preserves_actions() {
        let ck = tiny_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let mut rng = rng_from_seed(77);
        for _ in 0..100 {
            let mut o = [0.0; OBS_DIM];
            for x in o.iter_mut() {
                *x = rng.random_range(-30.0..30.0);
            }
            let obs = Observation(o);
            assert_eq!(ck.greedy_action(&obs), back.greedy_action(&obs));
            let p: f64 = back.action_probs(&obs).iter().sum();
            assert!((p - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let bytes = tiny_checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn greedy_rollout_is_deterministic_and_consistent() {
        let ck = tiny_checkpoint();
        let spec = ScenarioSpec::yielding(13.4112, 5.0, true);
        let params = NonPolicyParams::from_array([2.0, 4.0, 2.0, 1.0, 1.0]);
        let cfg = EnvConfig::default();
        let a = greedy_rollout(&ck, spec, params, 5, &cfg).unwrap();
        let b = greedy_rollout(&ck, spec, params, 5, &cfg).unwrap();
        assert_eq!(a, b);
        let logged: f64 = a.ticks.iter().map(|r| r.r_total).sum();
        assert!((logged - a.totals.total()).abs() < 1e-9);
    }

    #[test]
    fn action_set_mismatch_is_an_error() {
        let ck = tiny_checkpoint();
        let cfg = EnvConfig { action_set: ActionSet::literal(), ..EnvConfig::default() };
        let spec = ScenarioSpec::constant_speed(11.176, 3.0);
        let err = greedy_rollout(&ck, spec, NonPolicyParams::zeros(), 1, &cfg).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }
}
