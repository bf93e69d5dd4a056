//! PPO trainer: Gaussian MLP policy, GAE, clipped surrogate with analytic
//! gradients, rollout collection and resumable training.

mod normalizer;
mod policy;
mod ppo;
mod train;

pub use normalizer::{RunningNorm, OBS_CLIP};
pub use policy::{entropy, log_prob, policy_forward, policy_forward_batch, sample_action, PolicyOutput, PolicyParams};
pub use ppo::{
    clip_grad_norm, gae, loss_and_grad, normalize_advantages, ppo_update, Adam, Batch, LossStats, PPOConfig,
    RolloutBuffer,
};
pub use train::{
    collect_rollouts, env_rng, load_checkpoint, train, train_with_hook, Checkpoint, EnvSlot, IterationRecord, TrainInit, TrainOptions,
    TrainReport, CHECKPOINT_SCHEMA,
};

use crate::env::HandEnv;
use crate::error::Result;

/// Outcome of one environment step as seen by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub demo_err: f64,
    pub obj_err: f64,
    pub success: bool,
}

/// Anything the trainer can roll out.
pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<Transition>;
}

impl Environment for HandEnv {
    fn obs_dim(&self) -> usize {
        HandEnv::obs_dim(self)
    }

    fn act_dim(&self) -> usize {
        self.action_dim()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        Ok(HandEnv::reset(self, seed)?.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let r = HandEnv::step(self, action)?;
        Ok(Transition {
            obs: r.obs.to_vec(),
            reward: r.reward,
            done: r.done,
            demo_err: r.info.demo_err,
            obj_err: r.info.obj_pos_err,
            success: r.info.success_step,
        })
    }
}

/// Deterministic action: the policy mean on the normalized observation.
pub fn act_deterministic(params: &PolicyParams, norm: &RunningNorm, obs: &[f64]) -> Result<Vec<f64>> {
    Ok(policy_forward(params, &norm.normalize(obs))?.mean)
}
