use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::policy::{unroll_on_tape, PolicyNet, N_LEVELS, N_LOGITS};
use crate::env::AgentAction;
use crate::nn::{Adam, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    /// Episodes per minibatch; each episode is one unbroken sequence.
    pub minibatch_episodes: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.999,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 4,
            minibatch_episodes: 8,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            normalize_advantages: true,
        }
    }
}

/// Generalized advantage estimates for one complete episode; the value after
/// the last step is zero.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// One agent's view of a set of complete, equal-length episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBatch {
    /// `[episode][t]` observations.
    pub obs: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<AgentAction>>,
    pub log_probs: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

impl AgentBatch {
    pub fn n_episodes(&self) -> usize {
        self.obs.len()
    }

    pub fn horizon(&self) -> usize {
        self.obs.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    /// Share of samples whose ratio sat outside the clip band.
    pub clip_fraction: f64,
}

/// Builds the clipped PPO loss over the episodes in `idx` and returns the
/// scalar node with its parts.
pub fn ppo_loss_on_tape(
    tape: &mut Tape,
    net: &PolicyNet,
    vars: &[usize],
    batch: &AgentBatch,
    idx: &[usize],
    cfg: &PpoConfig,
) -> (usize, LossParts) {
    let m = idx.len();
    let horizon = batch.horizon();
    let col = |f: &dyn Fn(usize) -> f64| Array2::from_shape_fn((m, 1), |(r, _)| f(idx[r]));
    let obs: Vec<Array2<f64>> = (0..horizon)
        .map(|t| Array2::from_shape_fn((m, net.obs_dim), |(r, j)| batch.obs[idx[r]][t][j]))
        .collect();
    let steps = unroll_on_tape(tape, net, vars, &obs);

    // advantages are normalized over the minibatch
    let (mut mean, mut std) = (0.0, 1.0);
    if cfg.normalize_advantages {
        let all: Vec<f64> = idx.iter().flat_map(|&e| batch.advantages[e].iter().copied()).collect();
        let n = all.len() as f64;
        mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        std = var.sqrt() + 1e-8;
    }

    let mut parts = LossParts::default();
    let mut total = None;
    let mut clipped = 0usize;
    for (t, step) in steps.iter().enumerate() {
        let onehot = Array2::from_shape_fn((m, N_LOGITS), |(r, k)| {
            let a = batch.actions[idx[r]][t].indices();
            f64::from(a[k / N_LEVELS] as usize == k % N_LEVELS)
        });
        let onehot = tape.leaf(onehot);
        let picked = tape.mul(step.log_probs, onehot);
        let logp = tape.sum_cols(picked);
        let old = tape.leaf(col(&|e| batch.log_probs[e][t]));
        let diff = tape.sub(logp, old);
        let ratio = tape.exp(diff);
        clipped += tape
            .value(ratio)
            .iter()
            .filter(|r| (**r - 1.0).abs() > cfg.clip)
            .count();
        let adv = tape.leaf(col(&|e| (batch.advantages[e][t] - mean) / std));
        let s1 = tape.mul(ratio, adv);
        let rc = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        let s2 = tape.mul(rc, adv);
        let surr = tape.min(s1, s2);
        let pl = tape.mean(surr);
        let pl = tape.scale(pl, -1.0);

        let ret = tape.leaf(col(&|e| batch.returns[e][t]));
        let err = tape.sub(step.value, ret);
        let sq = tape.square(err);
        let vl = tape.mean(sq);

        let p = tape.exp(step.log_probs);
        let plogp = tape.mul(p, step.log_probs);
        let negent = tape.sum_cols(plogp);
        let negent = tape.mean(negent);

        parts.policy += tape.scalar(pl);
        parts.value += tape.scalar(vl);
        parts.entropy -= tape.scalar(negent);

        let vl = tape.scale(vl, cfg.value_coef);
        let en = tape.scale(negent, cfg.entropy_coef);
        let a = tape.add(pl, vl);
        let step_loss = tape.add(a, en);
        total = Some(match total {
            None => step_loss,
            Some(acc) => tape.add(acc, step_loss),
        });
    }
    let inv = 1.0 / horizon.max(1) as f64;
    let total = tape.scale(total.expect("non-empty horizon"), inv);
    parts.policy *= inv;
    parts.value *= inv;
    parts.entropy *= inv;
    parts.total = tape.scalar(total);
    parts.clip_fraction = clipped as f64 / (m * horizon).max(1) as f64;
    (total, parts)
}

/// Loss value and parameter gradients over the episodes in `idx`.
pub fn ppo_loss_and_grads(
    net: &PolicyNet,
    batch: &AgentBatch,
    idx: &[usize],
    cfg: &PpoConfig,
) -> (LossParts, Vec<Array2<f64>>) {
    let mut tape = Tape::new();
    let vars = net.params.on_tape(&mut tape);
    let (loss, parts) = ppo_loss_on_tape(&mut tape, net, &vars, batch, idx, cfg);
    let grads = tape.backward(loss);
    let g = vars
        .iter()
        .zip(&net.params.tensors)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();
    (parts, g)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss: LossParts,
    pub minibatches: usize,
    /// Set when a non-finite loss or gradient aborted the update.
    pub aborted: bool,
}

/// Several epochs of minibatch PPO on one agent's batch. A non-finite loss
/// or gradient restores the parameters and optimizer state from before the
/// update.
pub fn ppo_update(
    net: &mut PolicyNet,
    opt: &mut Adam,
    batch: &AgentBatch,
    cfg: &PpoConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> UpdateStats {
    use rand::seq::SliceRandom;
    let saved = (net.params.clone(), opt.clone());
    let mut order: Vec<usize> = (0..batch.n_episodes()).collect();
    let mb = cfg.minibatch_episodes.clamp(1, order.len().max(1));
    let mut stats = UpdateStats::default();
    let mut sum = LossParts::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(mb) {
            let (parts, grads) = ppo_loss_and_grads(net, batch, idx, cfg);
            let finite = parts.total.is_finite() && grads.iter().all(|g| g.iter().all(|v| v.is_finite()));
            if !finite {
                log::warn!("non-finite PPO loss; update discarded");
                net.params = saved.0;
                *opt = saved.1;
                return UpdateStats {
                    aborted: true,
                    ..UpdateStats::default()
                };
            }
            opt.step(&mut net.params, &grads);
            sum.policy += parts.policy;
            sum.value += parts.value;
            sum.entropy += parts.entropy;
            sum.total += parts.total;
            sum.clip_fraction += parts.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches.max(1) as f64;
    stats.loss = LossParts {
        policy: sum.policy / k,
        value: sum.value / k,
        entropy: sum.entropy / k,
        total: sum.total / k,
        clip_fraction: sum.clip_fraction / k,
    };
    stats
}
