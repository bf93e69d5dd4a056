//! Tendon-driven assistive glove: three non-negative channels (finger
//! contraction, finger extension, thumb support) mapped to joint torques on a
//! fixed set of joints, and shared control with a frozen hand policy.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biomech::HandModel;
use crate::env::{HandEnv, StepResult};
use crate::error::{Error, Result};
use crate::rl::{act_deterministic, Environment, PolicyParams, RunningNorm, Transition};

/// Glove channels.
pub const GLOVE_ACTION_DIM: usize = 3;

/// Config-level description of the glove.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GloveParams {
    /// Joints pulled by the flexion and extension tendons.
    pub finger_joints: Vec<String>,
    /// Joint receiving the thumb support torque.
    pub thumb_joint: String,
    /// m.
    pub flex_moment_arm: f64,
    /// m.
    pub ext_moment_arm: f64,
    /// N.
    pub flex_force: f64,
    /// N.
    pub ext_force: f64,
    /// N·m.
    pub thumb_max_torque: f64,
}

impl Default for GloveParams {
    fn default() -> Self {
        GloveParams {
            finger_joints: ["index_mcp", "index_pip", "middle_mcp", "middle_pip"].map(String::from).to_vec(),
            thumb_joint: "thumb_cmc".into(),
            flex_moment_arm: 0.005,
            ext_moment_arm: 0.005,
            flex_force: 20.0,
            ext_force: 20.0,
            thumb_max_torque: 0.5,
        }
    }
}

/// Glove resolved against a hand model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GloveModel {
    pub finger_joints: Vec<usize>,
    pub thumb_joint: usize,
    pub flex_moment_arm: f64,
    pub ext_moment_arm: f64,
    pub flex_force: f64,
    pub ext_force: f64,
    pub thumb_max_torque: f64,
    /// True exactly at the finger joints and the thumb joint.
    pub mask: Vec<bool>,
}

impl GloveModel {
    pub fn new(model: &HandModel, params: &GloveParams) -> Result<Self> {
        let find = |name: &str| {
            model
                .joint_index(name)
                .ok_or_else(|| Error::config(format!("glove joint {name} is not in the hand model")))
        };
        let finger_joints = params.finger_joints.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
        let thumb_joint = find(&params.thumb_joint)?;
        let positive = [
            params.flex_moment_arm,
            params.ext_moment_arm,
            params.flex_force,
            params.ext_force,
            params.thumb_max_torque,
        ];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::config("glove forces and moment arms must be positive"));
        }
        if finger_joints.is_empty() || finger_joints.contains(&thumb_joint) {
            return Err(Error::config("glove needs finger joints distinct from the thumb joint"));
        }
        let mut mask = vec![false; model.num_joints()];
        for &j in finger_joints.iter().chain(std::iter::once(&thumb_joint)) {
            mask[j] = true;
        }
        Ok(GloveModel {
            finger_joints,
            thumb_joint,
            flex_moment_arm: params.flex_moment_arm,
            ext_moment_arm: params.ext_moment_arm,
            flex_force: params.flex_force,
            ext_force: params.ext_force,
            thumb_max_torque: params.thumb_max_torque,
            mask,
        })
    }

    pub fn desk_default(model: &HandModel) -> Result<Self> {
        Self::new(model, &GloveParams::default())
    }
}

/// Contraction, extension and thumb support, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GloveAction {
    pub contraction: f64,
    pub extension: f64,
    pub thumb: f64,
}

impl GloveAction {
    pub fn new(contraction: f64, extension: f64, thumb: f64) -> Self {
        GloveAction {
            contraction,
            extension,
            thumb,
        }
        .clamped()
    }

    /// Componentwise clamp to [0, 1]; NaN maps to 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        GloveAction {
            contraction: c(self.contraction),
            extension: c(self.extension),
            thumb: c(self.thumb),
        }
    }

    pub fn from_slice(a: &[f64]) -> Result<Self> {
        if a.len() != GLOVE_ACTION_DIM {
            return Err(Error::usage(format!("glove action needs {GLOVE_ACTION_DIM} values, got {}", a.len())));
        }
        Ok(GloveAction::new(a[0], a[1], a[2]))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.contraction, self.extension, self.thumb]
    }
}

/// Joint torques produced by the glove. `q` is accepted for interface
/// symmetry; moment arms are constant.
pub fn glove_torques(action: GloveAction, q: &[f64], model: &GloveModel) -> Vec<f64> {
    let a = action.clamped();
    let mut tau = vec![0.0; q.len().max(model.mask.len())];
    let finger = a.contraction * model.flex_force * model.flex_moment_arm - a.extension * model.ext_force * model.ext_moment_arm;
    for &j in &model.finger_joints {
        tau[j] += finger;
    }
    tau[model.thumb_joint] += a.thumb * model.thumb_max_torque;
    for (t, m) in tau.iter_mut().zip(&model.mask) {
        if !m {
            *t = 0.0;
        }
    }
    tau
}

/// Hand policy that may no longer change.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPolicy {
    params: PolicyParams,
    norm: RunningNorm,
    digest: String,
}

fn frozen_digest(params: &PolicyParams, norm: &RunningNorm) -> String {
    let mut h = Sha256::new();
    h.update(params.digest().as_bytes());
    h.update(norm.count.to_bits().to_le_bytes());
    for v in norm.mean.iter().chain(&norm.var) {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl FrozenPolicy {
    pub fn new(params: PolicyParams, norm: RunningNorm) -> Result<Self> {
        params.validate()?;
        if norm.dim() != params.obs_dim {
            return Err(Error::config("normalizer size differs from the policy input size"));
        }
        let digest = frozen_digest(&params, &norm);
        Ok(FrozenPolicy { params, norm, digest })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn norm(&self) -> &RunningNorm {
        &self.norm
    }

    /// Digest recorded at freeze time.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Recomputes the digest and compares it with `expected`.
    pub fn verify(&self, expected: &str) -> Result<()> {
        let found = frozen_digest(&self.params, &self.norm);
        if found != expected || self.digest != expected {
            return Err(Error::DigestMismatch {
                expected: expected.to_string(),
                found,
            });
        }
        Ok(())
    }

    /// Deterministic mean action of the hand.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        act_deterministic(&self.params, &self.norm, obs)
    }
}

/// One shared-control step: the frozen hand acts on `obs` (the observation
/// it last received) and the glove torques join the same dynamics step.
pub fn shared_step(
    env: &mut HandEnv,
    frozen: &FrozenPolicy,
    glove: &GloveModel,
    obs: &[f64],
    action: GloveAction,
) -> Result<StepResult> {
    let hand_action = frozen.act(obs)?;
    let tau = glove_torques(action, &env.state().q, glove);
    env.step_with_torques(&hand_action, Some(&tau))
}

/// Weakened hand driven by a frozen policy, with the glove as the learner.
#[derive(Debug, Clone)]
pub struct GloveEnv {
    env: HandEnv,
    frozen: Arc<FrozenPolicy>,
    glove: GloveModel,
    obs: Vec<f64>,
}

impl GloveEnv {
    /// Fails with a digest mismatch if `frozen` is not the policy with digest
    /// `expected_digest`.
    pub fn new(env: HandEnv, frozen: Arc<FrozenPolicy>, glove: GloveModel, expected_digest: &str) -> Result<Self> {
        frozen.verify(expected_digest)?;
        if frozen.params().obs_dim != env.obs_dim() || frozen.params().act_dim != env.action_dim() {
            return Err(Error::config("frozen hand policy does not fit the environment"));
        }
        if glove.mask.len() != env.model().num_joints() {
            return Err(Error::config("glove mask does not match the hand model"));
        }
        Ok(GloveEnv {
            env,
            frozen,
            glove,
            obs: Vec::new(),
        })
    }

    pub fn hand_env(&self) -> &HandEnv {
        &self.env
    }

    pub fn frozen(&self) -> &Arc<FrozenPolicy> {
        &self.frozen
    }

    pub fn glove(&self) -> &GloveModel {
        &self.glove
    }

    pub fn reset_env(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.obs = self.env.reset(seed)?.to_vec();
        Ok(self.obs.clone())
    }

    pub fn shared_step(&mut self, action: GloveAction) -> Result<StepResult> {
        if self.obs.is_empty() {
            return Err(Error::usage("reset the glove environment before stepping"));
        }
        let r = shared_step(&mut self.env, &self.frozen, &self.glove, &self.obs, action)?;
        self.obs = r.obs.to_vec();
        Ok(r)
    }
}

impl Environment for GloveEnv {
    fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    fn act_dim(&self) -> usize {
        GLOVE_ACTION_DIM
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.reset_env(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let r = self.shared_step(GloveAction::from_slice(action)?)?;
        Ok(Transition {
            obs: self.obs.clone(),
            reward: r.reward,
            done: r.done,
            demo_err: r.info.demo_err,
            obj_err: r.info.obj_pos_err,
            success: r.info.success_step,
        })
    }
}
