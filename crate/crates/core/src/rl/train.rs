use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::normalizer::RunningNorm;
use super::policy::{log_prob, policy_forward, sample_action, PolicyParams};
use super::ppo::{normalize_advantages, ppo_update, Adam, LossStats, PPOConfig, RolloutBuffer};
use super::Environment;
use crate::error::{Error, Result};
use crate::par::{map_mut, Execution};

pub const CHECKPOINT_SCHEMA: u32 = 1;

/// An environment boxed for heterogeneous rollout sets.
pub type EnvSlot = Box<dyn Environment>;

/// Random stream of environment `index` during `iteration`.
pub fn env_rng(seed: u64, index: usize, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    rng.set_stream(iteration);
    rng
}

fn update_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_4E5B);
    rng.set_stream(iteration);
    rng
}

/// Per-environment summary of one collection round.
#[derive(Debug, Clone, Default, PartialEq)]
struct EnvSummary {
    returns: Vec<f64>,
    demo_err: f64,
    obj_err: f64,
    successes: usize,
}

struct EnvRollout {
    obs: Vec<f64>,
    raw_obs: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    last_value: f64,
    summary: EnvSummary,
}

fn roll_one(
    env: &mut dyn Environment,
    params: &PolicyParams,
    norm: &RunningNorm,
    n_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EnvRollout> {
    let (od, ad) = (params.obs_dim, params.act_dim);
    let mut out = EnvRollout {
        obs: Vec::with_capacity(n_steps * od),
        raw_obs: Vec::with_capacity(n_steps * od),
        actions: Vec::with_capacity(n_steps * ad),
        log_probs: Vec::with_capacity(n_steps),
        rewards: Vec::with_capacity(n_steps),
        values: Vec::with_capacity(n_steps),
        dones: Vec::with_capacity(n_steps),
        last_value: 0.0,
        summary: EnvSummary::default(),
    };
    let mut raw = env.reset(rng.next_u64())?;
    let mut ep_return = 0.0;
    let mut nobs = vec![0.0; od];
    for t in 0..n_steps {
        norm.normalize_into(&raw, &mut nobs);
        let fwd = policy_forward(params, &nobs)?;
        let action = sample_action(&fwd.mean, &fwd.log_std, rng);
        let lp = log_prob(&fwd.mean, &fwd.log_std, &action);
        let tr = env.step(&action)?;
        if !tr.reward.is_finite() {
            return Err(Error::numerical(format!("non-finite reward at rollout step {t}")));
        }
        out.obs.extend_from_slice(&nobs);
        out.raw_obs.extend_from_slice(&raw);
        out.actions.extend_from_slice(&action);
        out.log_probs.push(lp);
        out.rewards.push(tr.reward);
        out.values.push(fwd.value);
        out.dones.push(tr.done);
        ep_return += tr.reward;
        out.summary.demo_err += tr.demo_err;
        out.summary.obj_err += tr.obj_err;
        out.summary.successes += tr.success as usize;
        if tr.done {
            out.summary.returns.push(ep_return);
            ep_return = 0.0;
            raw = env.reset(rng.next_u64())?;
        } else {
            raw = tr.obs;
        }
    }
    if !out.dones.last().copied().unwrap_or(true) {
        out.summary.returns.push(ep_return);
    }
    norm.normalize_into(&raw, &mut nobs);
    out.last_value = policy_forward(params, &nobs)?.value;
    Ok(out)
}

/// Steps every environment `n_steps` times with sampled actions, resetting
/// finished episodes in place. Environment `i` draws from
/// [`env_rng`]`(seed, i, iteration)`, so the buffer depends only on the
/// inputs, not on thread scheduling.
pub fn collect_rollouts(
    envs: &mut [EnvSlot],
    params: &PolicyParams,
    norm: &RunningNorm,
    n_steps: usize,
    seed: u64,
    iteration: u64,
    exec: Execution,
) -> Result<RolloutBuffer> {
    collect_with_summary(envs, params, norm, n_steps, seed, iteration, exec).map(|(b, _)| b)
}

fn collect_with_summary(
    envs: &mut [EnvSlot],
    params: &PolicyParams,
    norm: &RunningNorm,
    n_steps: usize,
    seed: u64,
    iteration: u64,
    exec: Execution,
) -> Result<(RolloutBuffer, Vec<EnvSummary>)> {
    for (i, env) in envs.iter().enumerate() {
        if env.obs_dim() != params.obs_dim || env.act_dim() != params.act_dim {
            return Err(Error::config(format!(
                "environment {i} has dims ({}, {}), policy expects ({}, {})",
                env.obs_dim(),
                env.act_dim(),
                params.obs_dim,
                params.act_dim
            )));
        }
    }
    if norm.dim() != params.obs_dim {
        return Err(Error::config("normalizer size differs from the observation size"));
    }
    let results = map_mut(exec, envs, |i, env| {
        let mut rng = env_rng(seed, i, iteration);
        roll_one(env.as_mut(), params, norm, n_steps, &mut rng)
    });
    let mut buf = RolloutBuffer {
        n_envs: envs.len(),
        n_steps,
        obs_dim: params.obs_dim,
        act_dim: params.act_dim,
        obs: Vec::new(),
        raw_obs: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        rewards: Vec::new(),
        values: Vec::new(),
        dones: Vec::new(),
        last_values: Vec::new(),
        advantages: Vec::new(),
        returns: Vec::new(),
    };
    let mut summaries = Vec::with_capacity(envs.len());
    for r in results {
        let r = r?;
        buf.obs.extend(r.obs);
        buf.raw_obs.extend(r.raw_obs);
        buf.actions.extend(r.actions);
        buf.log_probs.extend(r.log_probs);
        buf.rewards.extend(r.rewards);
        buf.values.extend(r.values);
        buf.dones.extend(r.dones);
        buf.last_values.push(r.last_value);
        summaries.push(r.summary);
    }
    Ok((buf, summaries))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub env_steps: u64,
    /// Mean return of the episodes in the round (cut-off ones included).
    pub mean_episode_reward: f64,
    /// Mean per-step keypoint tracking error (m).
    pub demo_err: f64,
    /// Mean per-step object position error (m).
    pub obj_err: f64,
    /// Fraction of steps with the object within tolerance.
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    /// Seconds spent in this call (not part of the logged records).
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// One JSON record per iteration.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::validation(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Everything needed to continue or reuse a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: u32,
    /// Pipeline stage that produced it (`init`, `prior`, `finetuned`, `glove`).
    pub stage: String,
    pub seed: u64,
    pub iteration: u64,
    pub env_steps: u64,
    pub config: PPOConfig,
    pub params: PolicyParams,
    pub norm: RunningNorm,
    pub adam: Adam,
    pub records: Vec<IterationRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CHECKPOINT_SCHEMA {
            return Err(Error::validation(format!("unsupported checkpoint schema {}", self.schema)));
        }
        self.params.validate()?;
        if self.norm.dim() != self.params.obs_dim || self.adam.m.len() != self.params.num_params() {
            return Err(Error::validation("checkpoint parts have inconsistent sizes"));
        }
        Ok(())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    ck.validate()?;
    Ok(ck)
}

/// Starting point of [`train`].
#[derive(Debug, Clone)]
pub enum TrainInit {
    /// Fresh network drawn from the run seed.
    Fresh,
    /// Given weights (and optionally their normalizer), fresh optimizer.
    Params(PolicyParams, Option<RunningNorm>),
    /// Continue an interrupted run exactly.
    Resume(Checkpoint),
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub seed: u64,
    pub exec: Execution,
    /// Directory for periodic and final checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stage label written into checkpoints.
    pub stage: String,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            seed: 0,
            exec: Execution::default(),
            checkpoint_dir: None,
            stage: "train".into(),
        }
    }
}

fn checkpoint_path(dir: &Path, stage: &str, iteration: u64) -> PathBuf {
    dir.join(format!("{stage}_{iteration:06}.json"))
}

/// Collect, estimate advantages, update; repeated until `total_steps`
/// environment steps. Returns the final checkpoint and the log.
pub fn train(
    envs: &mut [EnvSlot],
    config: &PPOConfig,
    init: TrainInit,
    opts: &TrainOptions,
) -> Result<(Checkpoint, TrainReport)> {
    train_with_hook(envs, config, init, opts, &mut |_| Ok(ControlFlow::Continue(())))
}

/// [`train`] with a callback after every iteration. `Break` ends the run
/// early (the final checkpoint is still written); an error aborts it.
pub fn train_with_hook(
    envs: &mut [EnvSlot],
    config: &PPOConfig,
    init: TrainInit,
    opts: &TrainOptions,
    hook: &mut dyn FnMut(&Checkpoint) -> Result<ControlFlow<()>>,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    if envs.is_empty() {
        return Err(Error::config("training needs at least one environment"));
    }
    if envs.len() != config.n_envs {
        return Err(Error::config(format!("config asks for {} envs, got {}", config.n_envs, envs.len())));
    }
    let (od, ad) = (envs[0].obs_dim(), envs[0].act_dim());
    let mut ck = match init {
        TrainInit::Fresh => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let params = PolicyParams::init(od, ad, &config.hidden, config.init_log_std, &mut rng);
            let n = params.num_params();
            Checkpoint {
                schema: CHECKPOINT_SCHEMA,
                stage: opts.stage.clone(),
                seed: opts.seed,
                iteration: 0,
                env_steps: 0,
                config: config.clone(),
                params,
                norm: RunningNorm::new(od),
                adam: Adam::new(n),
                records: Vec::new(),
            }
        }
        TrainInit::Params(params, norm) => {
            params.validate()?;
            let n = params.num_params();
            Checkpoint {
                schema: CHECKPOINT_SCHEMA,
                stage: opts.stage.clone(),
                seed: opts.seed,
                iteration: 0,
                env_steps: 0,
                config: config.clone(),
                norm: norm.unwrap_or_else(|| RunningNorm::new(params.obs_dim)),
                params,
                adam: Adam::new(n),
                records: Vec::new(),
            }
        }
        TrainInit::Resume(ck) => {
            ck.validate()?;
            if ck.seed != opts.seed {
                return Err(Error::config(format!("checkpoint seed {} differs from run seed {}", ck.seed, opts.seed)));
            }
            ck
        }
    };
    ck.config = config.clone();
    ck.stage = opts.stage.clone();
    if ck.params.obs_dim != od || ck.params.act_dim != ad {
        return Err(Error::config(format!(
            "policy dims ({}, {}) do not match environment dims ({od}, {ad})",
            ck.params.obs_dim, ck.params.act_dim
        )));
    }
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let start = Instant::now();
    let mut last_good: Option<PathBuf> = None;
    while ck.env_steps < config.total_steps {
        let it = ck.iteration;
        let (mut buf, summaries) =
            collect_with_summary(envs, &ck.params, &ck.norm, config.n_steps, opts.seed, it, opts.exec)?;
        ck.norm.update(&buf.raw_obs);
        buf.compute_advantages(config.gamma, config.gae_lambda);
        normalize_advantages(&mut buf.advantages);
        let mut rng = update_rng(opts.seed, it);
        let stats: LossStats = ppo_update(&buf, &mut ck.params, &mut ck.adam, config, &mut rng).map_err(|e| {
            let at = last_good.as_ref().map_or("none".to_string(), |p| p.display().to_string());
            Error::numerical(format!("{e}; last good checkpoint: {at}"))
        })?;
        ck.env_steps += buf.len() as u64;
        ck.iteration += 1;
        let steps = buf.len() as f64;
        let returns: Vec<f64> = summaries.iter().flat_map(|s| s.returns.iter().copied()).collect();
        let record = IterationRecord {
            iteration: ck.iteration,
            env_steps: ck.env_steps,
            mean_episode_reward: returns.iter().sum::<f64>() / returns.len().max(1) as f64,
            demo_err: summaries.iter().map(|s| s.demo_err).sum::<f64>() / steps,
            obj_err: summaries.iter().map(|s| s.obj_err).sum::<f64>() / steps,
            success_rate: summaries.iter().map(|s| s.successes).sum::<usize>() as f64 / steps,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
        };
        log::info!(
            "{} iter {} steps {} reward {:.3} demo_err {:.4} obj_err {:.4} success {:.3}",
            opts.stage,
            record.iteration,
            record.env_steps,
            record.mean_episode_reward,
            record.demo_err,
            record.obj_err,
            record.success_rate
        );
        ck.records.push(record);
        let flow = hook(&ck)?;
        if let Some(dir) = &opts.checkpoint_dir {
            let periodic = config.checkpoint_every > 0 && ck.iteration % config.checkpoint_every as u64 == 0;
            if periodic {
                let p = checkpoint_path(dir, &opts.stage, ck.iteration);
                ck.save(&p)?;
                last_good = Some(p);
            }
        }
        if flow.is_break() {
            break;
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        ck.save(&dir.join(format!("{}_final.json", opts.stage)))?;
    }
    let report = TrainReport {
        seed: opts.seed,
        records: ck.records.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((ck, report))
}
