use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{entropy, log_prob, mlp_backward, mlp_forward, PolicyParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PPOConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub n_envs: usize,
    /// Steps per environment per iteration.
    pub n_steps: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub total_steps: u64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Iterations between checkpoints (0 disables periodic ones).
    pub checkpoint_every: usize,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            lr: 3e-4,
            epochs: 10,
            minibatch_size: 256,
            n_envs: 8,
            n_steps: 500,
            entropy_coef: 0.0,
            value_coef: 0.5,
            total_steps: 0,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            init_log_std: -0.5,
            checkpoint_every: 10,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("gae_lambda must lie in [0, 1]"));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::config("clip_eps must be positive"));
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::config("lr and max_grad_norm must be positive"));
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.n_envs == 0 || self.n_steps == 0 {
            return Err(Error::config("epochs, minibatch_size, n_envs and n_steps must be positive"));
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) || !self.init_log_std.is_finite() {
            return Err(Error::config("loss coefficients must be non-negative"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.n_envs * self.n_steps
    }
}

/// Transitions of one collection round, stored env-major: entry
/// `e * n_steps + t` is step `t` of environment `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub n_steps: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Normalized observations the actions were sampled from.
    pub obs: Vec<f64>,
    /// Raw observations, for the normalizer update.
    pub raw_obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value of the observation after the last step of each environment.
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_envs * self.n_steps;
        let ok = self.obs.len() == n * self.obs_dim
            && self.raw_obs.len() == n * self.obs_dim
            && self.actions.len() == n * self.act_dim
            && self.log_probs.len() == n
            && self.rewards.len() == n
            && self.values.len() == n
            && self.dones.len() == n
            && self.last_values.len() == self.n_envs;
        if !ok {
            return Err(Error::validation("rollout buffer arrays have inconsistent lengths"));
        }
        Ok(())
    }

    /// Fills advantages and returns per environment with [`gae`].
    pub fn compute_advantages(&mut self, gamma: f64, lam: f64) {
        self.advantages = vec![0.0; self.len()];
        self.returns = vec![0.0; self.len()];
        for e in 0..self.n_envs {
            let r = e * self.n_steps..(e + 1) * self.n_steps;
            let (a, ret) = gae(
                &self.rewards[r.clone()],
                &self.values[r.clone()],
                &self.dones[r.clone()],
                self.last_values[e],
                gamma,
                lam,
            );
            self.advantages[r.clone()].copy_from_slice(&a);
            self.returns[r].copy_from_slice(&ret);
        }
    }
}

/// Generalized advantage estimation. `dones[t]` marks that step `t` ended an
/// episode; `last_value` bootstraps the state after the final step.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 == n { last_value } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lam * live * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { *a - mean };
    }
}

/// A minibatch view for the loss.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub obs: ArrayView2<'a, f64>,
    pub actions: ArrayView2<'a, f64>,
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

impl LossStats {
    pub fn total(&self, config: &PPOConfig) -> f64 {
        self.policy_loss + config.value_coef * self.value_loss - config.entropy_coef * self.entropy
    }
}

/// Clipped surrogate loss (to minimize) and its gradient with respect to
/// [`PolicyParams::flat`]:
/// `-mean(min(r A, clip(r) A)) + c_v mean(0.5 (V - R)^2) - c_e H`.
pub fn loss_and_grad(params: &PolicyParams, batch: &Batch, config: &PPOConfig) -> (LossStats, Vec<f64>) {
    let n = batch.obs.nrows();
    let nf = n as f64;
    let ad = params.act_dim;
    let psizes = params.policy_sizes();
    let vsizes = params.value_sizes();
    let pacts = mlp_forward(&psizes, &params.policy, batch.obs);
    let vacts = mlp_forward(&vsizes, &params.value, batch.obs);
    let mean = pacts.last().expect("output");
    let value = vacts.last().expect("output");
    let inv_var: Vec<f64> = params.log_std.iter().map(|s| (-2.0 * s).exp()).collect();

    let mut stats = LossStats::default();
    let mut d_mean = Array2::<f64>::zeros((n, ad));
    let mut d_log_std = vec![0.0; ad];
    let mut d_value = Array2::<f64>::zeros((n, 1));
    let (lo, hi) = (1.0 - config.clip_eps, 1.0 + config.clip_eps);
    for i in 0..n {
        let m = mean.row(i);
        let a = batch.actions.row(i);
        let lp = log_prob(m.as_slice().expect("row"), &params.log_std, a.as_slice().expect("row"));
        let ratio = (lp - batch.old_log_probs[i]).exp();
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(lo, hi) * adv;
        stats.policy_loss -= unclipped.min(clipped) / nf;
        stats.approx_kl += (batch.old_log_probs[i] - lp) / nf;
        if !(lo..=hi).contains(&ratio) {
            stats.clip_fraction += 1.0 / nf;
        }
        if unclipped <= clipped {
            // d(-r A / n)/d logp
            let c = -unclipped / nf;
            for k in 0..ad {
                let diff = a[k] - m[k];
                d_mean[[i, k]] = c * diff * inv_var[k];
                d_log_std[k] += c * (diff * diff * inv_var[k] - 1.0);
            }
        }
        let err = value[[i, 0]] - batch.returns[i];
        stats.value_loss += 0.5 * err * err / nf;
        d_value[[i, 0]] = config.value_coef * err / nf;
    }
    stats.entropy = entropy(&params.log_std);
    for g in &mut d_log_std {
        *g -= config.entropy_coef;
    }

    let mut grad = vec![0.0; params.num_params()];
    let (gp, rest) = grad.split_at_mut(params.policy.len());
    let (gv, gs) = rest.split_at_mut(params.value.len());
    mlp_backward(&psizes, &params.policy, &pacts, d_mean, gp);
    mlp_backward(&vsizes, &params.value, &vacts, d_value, gv);
    gs.copy_from_slice(&d_log_std);
    (stats, grad)
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Adam {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One descent step on `theta` along `grad`.
    pub fn apply(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step as i32);
        let c2 = 1.0 - Self::B2.powi(self.step as i32);
        for i in 0..theta.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Epochs of shuffled minibatch descent on the clipped surrogate. The buffer
/// must already hold normalized advantages. Returns the mean loss statistics
/// over all minibatches.
pub fn ppo_update<R: Rng + ?Sized>(
    buffer: &RolloutBuffer,
    params: &mut PolicyParams,
    adam: &mut Adam,
    config: &PPOConfig,
    rng: &mut R,
) -> Result<LossStats> {
    buffer.validate()?;
    if buffer.advantages.len() != buffer.len() || buffer.returns.len() != buffer.len() {
        return Err(Error::usage("advantages must be computed before the update"));
    }
    let n = buffer.len();
    let (od, ad) = (buffer.obs_dim, buffer.act_dim);
    let mut idx: Vec<usize> = (0..n).collect();
    let mb = config.minibatch_size.min(n).max(1);
    let mut sum = LossStats::default();
    let mut count = 0usize;
    let mut theta = params.flat();
    let mut obs = Vec::with_capacity(mb * od);
    let mut act = Vec::with_capacity(mb * ad);
    let (mut olp, mut adv, mut ret) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..config.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            obs.clear();
            act.clear();
            olp.clear();
            adv.clear();
            ret.clear();
            for &i in chunk {
                obs.extend_from_slice(&buffer.obs[i * od..(i + 1) * od]);
                act.extend_from_slice(&buffer.actions[i * ad..(i + 1) * ad]);
                olp.push(buffer.log_probs[i]);
                adv.push(buffer.advantages[i]);
                ret.push(buffer.returns[i]);
            }
            let batch = Batch {
                obs: ArrayView2::from_shape((chunk.len(), od), &obs).expect("shape"),
                actions: ArrayView2::from_shape((chunk.len(), ad), &act).expect("shape"),
                old_log_probs: &olp,
                advantages: &adv,
                returns: &ret,
            };
            let (stats, mut grad) = loss_and_grad(params, &batch, config);
            let total = stats.total(config);
            if !total.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::numerical(format!(
                    "non-finite PPO loss (policy {}, value {}, entropy {})",
                    stats.policy_loss, stats.value_loss, stats.entropy
                )));
            }
            clip_grad_norm(&mut grad, config.max_grad_norm);
            adam.apply(&mut theta, &grad, config.lr);
            params.set_flat(&theta);
            sum.policy_loss += stats.policy_loss;
            sum.value_loss += stats.value_loss;
            sum.entropy += stats.entropy;
            sum.approx_kl += stats.approx_kl;
            sum.clip_fraction += stats.clip_fraction;
            count += 1;
        }
    }
    let c = count.max(1) as f64;
    Ok(LossStats {
        policy_loss: sum.policy_loss / c,
        value_loss: sum.value_loss / c,
        entropy: sum.entropy / c,
        approx_kl: sum.approx_kl / c,
        clip_fraction: sum.clip_fraction / c,
    })
}
