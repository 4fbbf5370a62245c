//! Clipped-surrogate PPO loss with analytic gradients.

use ndarray::{Array2, Axis};

use super::net::{Linear, Mlp};
use crate::error::{Error, Result};

/// Separate policy and value networks trained by one optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub policy: Mlp,
    pub value: Mlp,
}

impl ActorCritic {
    /// All layers, policy first.
    pub fn layers(&self) -> Vec<Linear> {
        self.policy.layers.iter().chain(&self.value.layers).cloned().collect()
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.policy.layers.iter_mut().chain(self.value.layers.iter_mut())
    }

    pub fn set_layers(&mut self, layers: Vec<Linear>) {
        let np = self.policy.layers.len();
        let mut it = layers.into_iter();
        self.policy.layers = it.by_ref().take(np).collect();
        self.value.layers = it.collect();
    }

    pub fn num_params(&self) -> usize {
        self.policy.num_params() + self.value.num_params()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip_range: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
}

/// One minibatch of normalized observations and targets.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a> {
    pub obs: &'a Array2<f64>,
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// min(r·A, clip(r, 1−ε, 1+ε)·A)
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - lse);
    }
    out
}

/// Normalizes to zero mean and unit (sample) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n == 0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// Loss value and gradients for every layer (policy layers first, then value).
pub fn loss_and_grad(ac: &ActorCritic, mb: &Minibatch, coefs: &LossCoefs) -> Result<(LossStats, Vec<Linear>)> {
    let b = mb.actions.len();
    let bf = b as f64;
    let (logits, p_acts) = ac.policy.forward_cached(mb.obs);
    let (values, v_acts) = ac.value.forward_cached(mb.obs);
    let logp = log_softmax(&logits);
    let n_actions = logits.ncols();

    let mut stats = LossStats::default();
    let mut g_logits = Array2::<f64>::zeros((b, n_actions));
    let mut g_values = Array2::<f64>::zeros((b, 1));

    for i in 0..b {
        let a = mb.actions[i];
        let row = logp.row(i);
        let new_lp = row[a];
        let log_ratio = new_lp - mb.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = mb.advantages[i];

        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - coefs.clip_range, 1.0 + coefs.clip_range) * adv;
        stats.policy_loss -= unclipped.min(clipped) / bf;
        if (ratio - 1.0).abs() > coefs.clip_range {
            stats.clip_fraction += 1.0 / bf;
        }
        stats.approx_kl += ((ratio - 1.0) - log_ratio) / bf;
        // d(-min)/d(logp_a); zero when the clipped branch is active
        let d_lp = if unclipped <= clipped { -adv * ratio / bf } else { 0.0 };

        let mut entropy = 0.0;
        for j in 0..n_actions {
            let p = row[j].exp();
            entropy -= p * row[j];
        }
        stats.entropy += entropy / bf;

        for j in 0..n_actions {
            let p = row[j].exp();
            let indicator = if j == a { 1.0 } else { 0.0 };
            let d_policy = d_lp * (indicator - p);
            // loss term −ent_coef·H, with dH/dz_j = −p_j (log p_j + H)
            let d_entropy = coefs.ent_coef * p * (row[j] + entropy) / bf;
            g_logits[(i, j)] = d_policy + d_entropy;
        }

        let v = values[(i, 0)];
        let err = v - mb.returns[i];
        stats.value_loss += err * err / bf;
        g_values[(i, 0)] = coefs.vf_coef * 2.0 * err / bf;
    }

    stats.total = stats.policy_loss - coefs.ent_coef * stats.entropy + coefs.vf_coef * stats.value_loss;
    if !stats.total.is_finite() || logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite PPO loss: policy={} value={} entropy={} kl={}",
            stats.policy_loss, stats.value_loss, stats.entropy, stats.approx_kl
        )));
    }

    let mut grads = ac.policy.backward(&p_acts, g_logits);
    grads.extend(ac.value.backward(&v_acts, g_values));
    Ok((stats, grads))
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn surrogate_examples() {
        let a = 2.0;
        assert_eq!(clipped_surrogate(1.5, a, 0.2), 1.2 * a);
        assert_eq!(clipped_surrogate(1.0, a, 0.2), 1.0 * a);
        // negative advantage keeps the pessimistic unclipped branch
        assert_eq!(clipped_surrogate(1.5, -a, 0.2), -1.5 * a);
    }

    #[test]
    fn softmax_rows_normalized() {
        let z = array![[1000.0, 0.0, -1000.0], [0.1, 0.2, 0.3]];
        let lp = log_softmax(&z);
        for row in lp.axis_iter(Axis(0)) {
            let s: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn advantage_normalization() {
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        normalize_advantages(&mut a);
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
        let var = a.iter().map(|x| x * x).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-6);
    }

    fn toy() -> ActorCritic {
        // policy 2→2→2 (12 params); value 2→2→1 (9 params)
        let mut rng = rng_from_seed(11);
        ActorCritic {
            policy: Mlp::new(&[2, 2, 2], 1.0, &mut rng),
            value: Mlp::new(&[2, 2, 1], 1.0, &mut rng),
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let ac = toy();
        let obs = array![[0.5, -0.3], [-0.8, 0.9], [0.2, 0.4], [1.1, -1.2]];
        let actions = [0usize, 1, 1, 0];
        let current = log_softmax(&ac.policy.forward(&obs));
        // Ratios of 0.9, 1.1 (inside the clip range) and 1.6, 0.5 (outside) with mixed signs.
        let ratios = [0.9, 1.1, 1.6, 0.5];
        let old: Vec<f64> = (0..4).map(|i| current[(i, actions[i])] - f64::ln(ratios[i])).collect();
        let adv = [1.0, -0.5, 0.8, -1.3];
        let ret = [0.3, -0.2, 1.0, 0.0];
        let mb = Minibatch {
            obs: &obs,
            actions: &actions,
            old_log_probs: &old,
            advantages: &adv,
            returns: &ret,
        };
        let coefs = LossCoefs { clip_range: 0.2, vf_coef: 0.5, ent_coef: 0.01 };
        let (_, grads) = loss_and_grad(&ac, &mb, &coefs).unwrap();

        let loss_at = |layers: Vec<Linear>| {
            let mut net = ac.clone();
            net.set_layers(layers);
            loss_and_grad(&net, &mb, &coefs).unwrap().0.total
        };
        let base = ac.layers();
        let h = 1e-6;
        let mut checked = 0;
        for li in 0..base.len() {
            for part in 0..2 {
                for idx in 0..base[li].slices()[part].len() {
                    let mut plus = base.clone();
                    plus[li].slices_mut()[part][idx] += h;
                    let mut minus = base.clone();
                    minus[li].slices_mut()[part][idx] -= h;
                    let fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
                    let an = grads[li].slices()[part][idx];
                    assert!(rel_err(fd, an) < 1e-4 || (fd - an).abs() < 1e-9, "layer {li} part {part} idx {idx}: fd {fd} analytic {an}");
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, ac.num_params());
    }
}
