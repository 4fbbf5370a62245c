use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_grad_norm, Adam};
use super::buffer::{RolloutBuffer, Trajectory};
use super::checkpoint::Checkpoint;
use super::loss::{log_softmax, loss_and_grad, normalize_advantages, ActorCritic, LossCoefs, LossStats, Minibatch};
use super::net::Mlp;
use super::normalize::RunningMeanStd;
use crate::env::{EnvConfig, NonPolicyParams, Observation, PedestrianEnv, TerminalState, Variant, OBS_DIM};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, SimRng};
use crate::scenario::sample_training_scenario;

/// Stream indices handed to [`derived_rng`]; workers use `0..n_envs`.
const ACTION_STREAM: u64 = 1 << 20;
const INIT_STREAM: u64 = 1 << 30;
const SHUFFLE_STREAM: u64 = (1 << 30) + 1;

/// How the conditioning parameters are chosen for each new episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ParamSampling {
    Uniform,
    Fixed { params: NonPolicyParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_env_steps: u64,
    /// Steps per environment per rollout.
    pub rollout_len: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub n_envs: usize,
    pub hidden: Vec<usize>,
    pub obs_clip: f64,
    pub env: EnvConfig,
    pub params: ParamSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_env_steps: 3_000_000,
            rollout_len: 2048,
            minibatch_size: 64,
            epochs: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.0,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            n_envs: 8,
            hidden: vec![128, 64],
            obs_clip: 10.0,
            env: EnvConfig { record_ticks: false, ..EnvConfig::default() },
            params: ParamSampling::Uniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return Err(Error::invalid(format!("clip_range must lie in (0, 1), got {}", self.clip_range)));
        }
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return Err(Error::invalid("gamma and gae_lambda must lie in (0, 1]"));
        }
        if self.rollout_len == 0 || self.minibatch_size == 0 || self.epochs == 0 || self.n_envs == 0 {
            return Err(Error::invalid("rollout_len, minibatch_size, epochs and n_envs must be > 0"));
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::invalid("learning_rate and max_grad_norm must be > 0"));
        }
        if self.vf_coef < 0.0 || self.ent_coef < 0.0 {
            return Err(Error::invalid("loss coefficients must be >= 0"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be > 0"));
        }
        if let ParamSampling::Fixed { params } = &self.params {
            params.validate()?;
        }
        Ok(())
    }

    fn coefs(&self) -> LossCoefs {
        LossCoefs {
            clip_range: self.clip_range,
            vf_coef: self.vf_coef,
            ent_coef: self.ent_coef,
        }
    }
}

/// One row of the learning curve (one PPO update).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub update: usize,
    pub env_steps: u64,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub collision_rate: Option<f64>,
    pub crossed_rate: Option<f64>,
    pub timeout_rate: Option<f64>,
    pub mean_episode_length: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Episode statistics from one rollout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutStats {
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    pub outcomes: Vec<TerminalState>,
    /// Parameters drawn for every episode started during the rollout.
    pub sampled_params: Vec<NonPolicyParams>,
}

impl RolloutStats {
    fn rate(&self, state: TerminalState) -> Option<f64> {
        (!self.outcomes.is_empty()).then(|| {
            self.outcomes.iter().filter(|o| **o == state).count() as f64 / self.outcomes.len() as f64
        })
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = xs.len();
    (n > 0).then(|| xs.sum::<f64>() / n as f64)
}

struct Worker {
    env: PedestrianEnv,
    rng: SimRng,
    act_rng: SimRng,
    obs: Observation,
    ep_return: f64,
    ep_len: usize,
}

impl Worker {
    fn start_episode(&mut self, variant: Variant, sampling: &ParamSampling) -> Result<NonPolicyParams> {
        let spec = sample_training_scenario(&mut self.rng);
        let params = match sampling {
            ParamSampling::Uniform => NonPolicyParams::sample_uniform(&mut self.rng),
            ParamSampling::Fixed { params } => *params,
        };
        let seed = self.rng.random::<u64>();
        self.obs = self.env.reset(spec, params, variant, seed)?;
        self.ep_return = 0.0;
        self.ep_len = 0;
        Ok(params)
    }
}

fn sample_categorical<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Stateful PPO learner over `n_envs` environments.
pub struct Trainer {
    variant: Variant,
    config: TrainConfig,
    seed: u64,
    nets: ActorCritic,
    opt: Adam,
    obs_norm: RunningMeanStd,
    workers: Vec<Worker>,
    shuffle_rng: SimRng,
    env_steps: u64,
    updates: usize,
    curve: Vec<CurveRow>,
    pending_params: Vec<NonPolicyParams>,
}

impl Trainer {
    pub fn new(variant: Variant, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n_actions = config.env.action_set.len();
        let mut init_rng = derived_rng(seed, INIT_STREAM);
        let mut sizes = vec![OBS_DIM];
        sizes.extend(&config.hidden);
        let policy = Mlp::new(&[sizes.as_slice(), &[n_actions]].concat(), 0.01, &mut init_rng);
        let value = Mlp::new(&[sizes.as_slice(), &[1]].concat(), 1.0, &mut init_rng);
        let nets = ActorCritic { policy, value };
        let opt = Adam::new(&nets.layers(), config.learning_rate);

        let mut pending_params = Vec::new();
        let mut workers = Vec::with_capacity(config.n_envs);
        for i in 0..config.n_envs {
            let mut w = Worker {
                env: PedestrianEnv::new(config.env.clone())?,
                rng: derived_rng(seed, i as u64),
                act_rng: derived_rng(seed, ACTION_STREAM + i as u64),
                obs: Observation([0.0; OBS_DIM]),
                ep_return: 0.0,
                ep_len: 0,
            };
            pending_params.push(w.start_episode(variant, &config.params)?);
            workers.push(w);
        }
        Ok(Self {
            variant,
            obs_norm: RunningMeanStd::new(OBS_DIM, config.obs_clip),
            config,
            seed,
            nets,
            opt,
            workers,
            shuffle_rng: derived_rng(seed, SHUFFLE_STREAM),
            env_steps: 0,
            updates: 0,
            curve: Vec::new(),
            pending_params,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn is_finished(&self) -> bool {
        self.env_steps >= self.config.total_env_steps
    }

    pub fn curve(&self) -> &[CurveRow] {
        &self.curve
    }

    pub fn nets(&self) -> &ActorCritic {
        &self.nets
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            variant: self.variant,
            action_set: self.config.env.action_set.clone(),
            obs_norm: self.obs_norm.clone(),
            nets: self.nets.clone(),
            env_steps: self.env_steps,
            seed: self.seed,
        }
    }

    fn normalized_batch(&self, rows: &[&[f64]]) -> Array2<f64> {
        let mut x = Array2::zeros((rows.len(), OBS_DIM));
        for (i, r) in rows.iter().enumerate() {
            let mut out = [0.0; OBS_DIM];
            self.obs_norm.normalize_into(r, &mut out);
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&out[..]));
        }
        x
    }

    /// Collects up to `rollout_len × n_envs` steps, never exceeding the step budget.
    pub fn collect_rollouts(&mut self) -> Result<(RolloutBuffer, RolloutStats)> {
        let n = self.workers.len();
        let remaining = self.config.total_env_steps.saturating_sub(self.env_steps);
        let target = ((self.config.rollout_len * n) as u64).min(remaining) as usize;
        let mut trajs = vec![Trajectory::default(); n];
        let mut stats = RolloutStats {
            sampled_params: std::mem::take(&mut self.pending_params),
            ..RolloutStats::default()
        };
        let gamma = self.config.gamma;
        let mut collected = 0;
        while collected < target {
            let active = n.min(target - collected);
            let raw: Vec<[f64; OBS_DIM]> = self.workers[..active].iter().map(|w| w.obs.0).collect();
            let rows: Vec<&[f64]> = raw.iter().map(|r| &r[..]).collect();
            self.obs_norm.update(&rows);
            let x = self.normalized_batch(&rows);
            let logp = log_softmax(&self.nets.policy.forward(&x));
            let values = self.nets.value.forward(&x);

            for i in 0..active {
                let lp_row = logp.row(i).to_vec();
                let worker = &mut self.workers[i];
                let action = sample_categorical(&lp_row, &mut worker.act_rng);
                let out = worker.env.step(action)?;
                let mut bootstrap = 0.0;
                worker.ep_return += out.reward;
                worker.ep_len += 1;
                if out.truncated {
                    let xt = {
                        let mut o = [0.0; OBS_DIM];
                        self.obs_norm.normalize_into(out.observation.as_slice(), &mut o);
                        Array2::from_shape_vec((1, OBS_DIM), o.to_vec()).expect("one row")
                    };
                    bootstrap = gamma * self.nets.value.forward(&xt)[(0, 0)];
                }
                let tr = &mut trajs[i];
                tr.obs.extend(x.row(i).iter());
                tr.actions.push(action);
                tr.log_probs.push(lp_row[action]);
                tr.rewards.push(out.reward);
                tr.bootstrap.push(bootstrap);
                tr.values.push(values[(i, 0)]);
                tr.dones.push(out.done);
                tr.truncated.push(out.truncated);

                let worker = &mut self.workers[i];
                if out.done {
                    stats.returns.push(worker.ep_return);
                    stats.lengths.push(worker.ep_len);
                    stats.outcomes.push(out.terminal);
                    let p = worker.start_episode(self.variant, &self.config.params)?;
                    stats.sampled_params.push(p);
                } else {
                    worker.obs = out.observation;
                }
            }
            collected += active;
        }

        let raw: Vec<[f64; OBS_DIM]> = self.workers.iter().map(|w| w.obs.0).collect();
        let rows: Vec<&[f64]> = raw.iter().map(|r| &r[..]).collect();
        let last_values = self.nets.value.forward(&self.normalized_batch(&rows));
        for (i, tr) in trajs.iter_mut().enumerate() {
            tr.last_value = last_values[(i, 0)];
        }
        self.env_steps += collected as u64;
        let buffer = RolloutBuffer::from_trajectories(&trajs, gamma, self.config.gae_lambda);
        Ok((buffer, stats))
    }

    /// Clipped-objective epochs over a collected buffer. Returns mean loss statistics.
    pub fn update(&mut self, buf: &RolloutBuffer) -> Result<LossStats> {
        let coefs = self.config.coefs();
        let mut indices: Vec<usize> = (0..buf.len()).collect();
        let mut sum = LossStats::default();
        let mut batches = 0usize;
        for _ in 0..self.config.epochs {
            indices.shuffle(&mut self.shuffle_rng);
            for chunk in indices.chunks(self.config.minibatch_size) {
                let obs = buf.obs.select(Axis(0), chunk);
                let actions: Vec<usize> = chunk.iter().map(|&i| buf.actions[i]).collect();
                let old: Vec<f64> = chunk.iter().map(|&i| buf.log_probs[i]).collect();
                let mut adv: Vec<f64> = chunk.iter().map(|&i| buf.advantages[i]).collect();
                normalize_advantages(&mut adv);
                let ret: Vec<f64> = chunk.iter().map(|&i| buf.returns[i]).collect();
                let mb = Minibatch {
                    obs: &obs,
                    actions: &actions,
                    old_log_probs: &old,
                    advantages: &adv,
                    returns: &ret,
                };
                let (stats, mut grads) = loss_and_grad(&self.nets, &mb, &coefs).map_err(|e| {
                    Error::Numeric(format!("update {} after {} env steps: {e}", self.updates, self.env_steps))
                })?;
                clip_grad_norm(&mut grads, self.config.max_grad_norm);
                self.opt.update(self.nets.layers_mut(), &grads);
                sum.total += stats.total;
                sum.policy_loss += stats.policy_loss;
                sum.value_loss += stats.value_loss;
                sum.entropy += stats.entropy;
                sum.approx_kl += stats.approx_kl;
                sum.clip_fraction += stats.clip_fraction;
                batches += 1;
            }
        }
        let k = batches.max(1) as f64;
        Ok(LossStats {
            total: sum.total / k,
            policy_loss: sum.policy_loss / k,
            value_loss: sum.value_loss / k,
            entropy: sum.entropy / k,
            approx_kl: sum.approx_kl / k,
            clip_fraction: sum.clip_fraction / k,
        })
    }

    /// One collect + update cycle. Returns `None` once the budget is spent.
    pub fn iterate(&mut self) -> Result<Option<&CurveRow>> {
        if self.is_finished() {
            return Ok(None);
        }
        let (buffer, stats) = self.collect_rollouts()?;
        let loss = self.update(&buffer)?;
        self.updates += 1;
        self.curve.push(CurveRow {
            update: self.updates,
            env_steps: self.env_steps,
            episodes: stats.returns.len(),
            mean_return: mean(stats.returns.iter().copied()),
            collision_rate: stats.rate(TerminalState::Collision),
            crossed_rate: stats.rate(TerminalState::Crossed),
            timeout_rate: stats.rate(TerminalState::Timeout),
            mean_episode_length: mean(stats.lengths.iter().map(|l| *l as f64)),
            policy_loss: loss.policy_loss,
            value_loss: loss.value_loss,
            entropy: loss.entropy,
            approx_kl: loss.approx_kl,
            clip_fraction: loss.clip_fraction,
        });
        log::debug!(
            "update {} steps {} return {:?} collisions {:?}",
            self.updates,
            self.env_steps,
            self.curve.last().and_then(|r| r.mean_return),
            self.curve.last().and_then(|r| r.collision_rate)
        );
        Ok(self.curve.last())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurveRow>,
}

/// Trains to completion, calling `on_update` after every update.
pub fn train_with<F>(variant: Variant, config: &TrainConfig, seed: u64, mut on_update: F) -> Result<TrainOutcome>
where
    F: FnMut(&Trainer) -> Result<()>,
{
    let mut trainer = Trainer::new(variant, config.clone(), seed)?;
    while trainer.iterate()?.is_some() {
        on_update(&trainer)?;
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        curve: trainer.curve,
    })
}

pub fn train(variant: Variant, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train_with(variant, config, seed, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            total_env_steps: 600,
            rollout_len: 64,
            n_envs: 4,
            epochs: 2,
            hidden: vec![16, 8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig { clip_range: 1.0, ..TrainConfig::default() },
            TrainConfig { gamma: 0.0, ..TrainConfig::default() },
            TrainConfig { gae_lambda: 1.1, ..TrainConfig::default() },
            TrainConfig { n_envs: 0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn rollouts_respect_contracts() {
        let mut t = Trainer::new(Variant::SM, small(), 5).unwrap();
        let (buf, stats) = t.collect_rollouts().unwrap();
        assert_eq!(buf.len(), 64 * 4);
        assert!(!stats.sampled_params.is_empty());
        for p in &stats.sampled_params {
            p.validate().unwrap();
        }
        assert!(buf.rewards.iter().all(|r| (-20.0..=20.0).contains(r)));
    }

    #[test]
    fn final_rollout_shrinks_to_budget() {
        let out = train(Variant::SM, &small(), 2).unwrap();
        assert_eq!(out.curve.last().unwrap().env_steps, 600);
        assert_eq!(out.curve.len(), 3);
    }

    #[test]
    fn same_seed_same_buffer() {
        let mut a = Trainer::new(Variant::S, small(), 9).unwrap();
        let mut b = Trainer::new(Variant::S, small(), 9).unwrap();
        let (ba, _) = a.collect_rollouts().unwrap();
        let (bb, _) = b.collect_rollouts().unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn categorical_sampling_edges() {
        let mut rng = crate::rng::rng_from_seed(0);
        let lp = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        for _ in 0..20 {
            assert_eq!(sample_categorical(&lp, &mut rng), 1);
        }
    }
}
