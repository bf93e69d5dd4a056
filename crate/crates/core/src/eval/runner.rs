use serde::{Deserialize, Serialize};

use super::{Condition, EpisodeTrace, StepRecord};
use crate::env::HandEnv;
use crate::error::{Error, Result};
use crate::exoglove::{shared_step, FrozenPolicy, GloveAction, GloveModel};
use crate::par::{map_range, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub trials: usize,
    /// Trial `k` uses seed `first_seed + k`.
    pub first_seed: u64,
    /// Added to the accumulated error for every step beyond `far`.
    pub punish: f64,
    /// m.
    pub far: f64,
    pub exec: Execution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 30,
            first_seed: 1,
            punish: 1.0,
            far: 0.2,
            exec: Execution::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("evaluation needs at least one trial"));
        }
        if !(self.far > 0.0) || !(self.punish >= 0.0) {
            return Err(Error::config("far must be positive and punish non-negative"));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|k| self.first_seed + k).collect()
    }
}

/// Who drives the hand during an evaluation episode.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Hand(&'a FrozenPolicy),
    /// Frozen hand plus a glove policy acting through shared control.
    Assisted {
        hand: &'a FrozenPolicy,
        glove_policy: &'a FrozenPolicy,
        glove: &'a GloveModel,
    },
}

/// Runs one deterministic episode from `reset(seed)`. An episode that ends
/// early (runaway object) is padded to the horizon with its last error and
/// no success, so every trace has `horizon` steps.
pub fn run_episode(env: &mut HandEnv, controller: Controller, seed: u64, condition: Condition) -> Result<EpisodeTrace> {
    let horizon = env.config().horizon;
    let dt = env.config().dt;
    let mut obs = env.reset(seed)?.to_vec();
    let mut steps = Vec::with_capacity(horizon);
    while !env.is_done() {
        let r = match controller {
            Controller::Hand(p) => env.step(&p.act(&obs)?)?,
            Controller::Assisted {
                hand,
                glove_policy,
                glove,
            } => {
                let a = GloveAction::from_slice(&glove_policy.act(&obs)?)?;
                shared_step(env, hand, glove, &obs, a)?
            }
        };
        obs = r.obs.to_vec();
        steps.push(StepRecord {
            t: env.step_index() as f64 * dt,
            obj_pos_err: r.info.obj_pos_err,
            obj_ang_err: r.info.obj_ang_err,
            demo_err: r.info.demo_err,
            reward: r.reward,
            keypoints: env.keypoints().iter().map(|k| [k.x, k.y, k.z]).collect(),
            success: r.info.success_step,
        });
    }
    while steps.len() < horizon {
        let mut last = steps.last().cloned().ok_or_else(|| Error::numerical("episode ended before its first step"))?;
        last.t += dt;
        last.success = false;
        last.reward = 0.0;
        steps.push(last);
    }
    Ok(EpisodeTrace { seed, condition, steps })
}

/// Independent trials on clones of `env`, in seed order.
pub fn run_trials(env: &HandEnv, controller: Controller, condition: Condition, config: &EvalConfig) -> Result<Vec<EpisodeTrace>> {
    config.validate()?;
    let seeds = config.seeds();
    map_range(config.exec, seeds.len(), |k| {
        let mut e = env.clone();
        run_episode(&mut e, controller, seeds[k], condition)
    })
    .into_iter()
    .collect()
}
