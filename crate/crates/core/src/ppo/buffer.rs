use ndarray::Array2;

use crate::env::OBS_DIM;

/// Steps collected from one environment during a rollout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    /// Normalized observations, row-major (`OBS_DIM` per step).
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// γ·V(s′) for steps cut by the time limit, 0 elsewhere.
    pub bootstrap: Vec<f64>,
    pub values: Vec<f64>,
    /// Episode ended after this step (termination or truncation).
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
    /// Value of the observation following the last step.
    pub last_value: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Generalized advantage estimation. `dones[t]` cuts the recursion after step t.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_value * nonterminal - values[t];
        next_adv = delta + gamma * lambda * nonterminal * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Flattened rollout with advantages and returns.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn from_trajectories(trajs: &[Trajectory], gamma: f64, lambda: f64) -> Self {
        let total: usize = trajs.iter().map(Trajectory::len).sum();
        let mut obs = Vec::with_capacity(total * OBS_DIM);
        let mut buf = RolloutBuffer {
            obs: Array2::zeros((0, OBS_DIM)),
            actions: Vec::with_capacity(total),
            log_probs: Vec::with_capacity(total),
            rewards: Vec::with_capacity(total),
            values: Vec::with_capacity(total),
            dones: Vec::with_capacity(total),
            truncated: Vec::with_capacity(total),
            advantages: Vec::with_capacity(total),
            returns: Vec::with_capacity(total),
        };
        for tr in trajs {
            let shaped: Vec<f64> = tr.rewards.iter().zip(&tr.bootstrap).map(|(r, b)| r + b).collect();
            let (adv, ret) = compute_gae(&shaped, &tr.values, &tr.dones, tr.last_value, gamma, lambda);
            obs.extend_from_slice(&tr.obs);
            buf.actions.extend_from_slice(&tr.actions);
            buf.log_probs.extend_from_slice(&tr.log_probs);
            buf.rewards.extend_from_slice(&tr.rewards);
            buf.values.extend_from_slice(&tr.values);
            buf.dones.extend_from_slice(&tr.dones);
            buf.truncated.extend_from_slice(&tr.truncated);
            buf.advantages.extend(adv);
            buf.returns.extend(ret);
        }
        buf.obs = Array2::from_shape_vec((total, OBS_DIM), obs).expect("row-major observations");
        buf
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn hand_recursion_oracle() {
        // δ3 = 1 − 0.5 = 0.5 (terminal)          A3 = 0.5
        // δ2 = 0 + 0.9·0.5 − 0.5 = −0.05          A2 = −0.05 + 0.72·0.5 = 0.31
        // δ1 = 1 + 0.9·0.5 − 0.5 = 0.95           A1 = 0.95 + 0.72·0.31 = 1.1732
        let (adv, ret) = compute_gae(&[1.0, 0.0, 1.0], &[0.5; 3], &[false, false, true], 0.0, 0.9, 0.8);
        let expected = [1.1732, 0.31, 0.5];
        for (a, e) in adv.iter().zip(expected) {
            assert!((a - e).abs() < 1e-9, "{adv:?}");
        }
        for (r, a) in ret.iter().zip(&adv) {
            assert!((r - (a + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_td_when_lambda_zero() {
        let r = [0.3, -1.0, 2.0];
        let v = [0.1, 0.4, -0.2];
        let (adv, _) = compute_gae(&r, &v, &[false, false, false], 0.7, 0.95, 0.0);
        let next = [0.4, -0.2, 0.7];
        for t in 0..3 {
            assert!((adv[t] - (r[t] + 0.95 * next[t] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn done_cuts_bootstrap() {
        let (adv, _) = compute_gae(&[1.0, 1.0], &[0.0, 5.0], &[true, true], 100.0, 0.9, 0.9);
        assert_eq!(adv, vec![1.0, -4.0]);
    }

    proptest! {
        #[test]
        fn telescoping_identity(rewards in proptest::collection::vec(-20.0f64..20.0, 1..30),
                                values in proptest::collection::vec(-5.0f64..5.0, 30)) {
            let n = rewards.len();
            let v = &values[..n];
            let mut dones = vec![false; n];
            dones[n - 1] = true;
            let (adv, _) = compute_gae(&rewards, v, &dones, 0.0, 1.0, 1.0);
            for t in 0..n {
                let tail: f64 = rewards[t..].iter().sum();
                prop_assert!((adv[t] - (tail - v[t])).abs() < 1e-9);
            }
        }
    }
}
