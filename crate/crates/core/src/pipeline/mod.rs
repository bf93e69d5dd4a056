//! Staged experiment orchestration: prior, fine-tune, glove training and
//! evaluation, with run directories, manifests and report files.

mod config;
mod manifest;

pub use config::{ExperimentConfig, SynthDemoSpec, WeaknessSpec, CONFIG_SCHEMA};
pub use manifest::{file_digest, RunManifest, StageRecord, MANIFEST_FILE, MANIFEST_SCHEMA};

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::biomech::{HandModel, WeaknessProfile};
use crate::env::{EnvConfig, HandEnv};
use crate::error::{Error, Result};
use crate::eval::{load_traces, run_episode, run_trials, save_traces, Condition, Controller, EpisodeTrace, MetricReport};
use crate::exoglove::{FrozenPolicy, GloveEnv, GloveModel, GLOVE_ACTION_DIM};
use crate::rl::{load_checkpoint, train_with_hook, Checkpoint, EnvSlot, IterationRecord, TrainInit, TrainOptions, TrainReport};
use crate::trajio::{save_demo, DemoSet};

pub const STAGE_PRIOR: &str = "prior";
pub const STAGE_FINETUNED: &str = "finetuned";
pub const STAGE_GLOVE: &str = "glove";

pub const METRICS_FILE: &str = "metrics.json";
pub const PIP_WRIST_PLOT: &str = "fig6_pip_wrist.csv";
pub const ACCUMULATED_ERROR_PLOT: &str = "fig7_accumulated_error.csv";

/// Directory structure of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn demos(&self) -> PathBuf {
        self.root.join("demos")
    }

    pub fn final_checkpoint(&self, stage: &str) -> PathBuf {
        self.checkpoints().join(format!("{stage}_final.json"))
    }

    pub fn traces(&self, c: Condition) -> PathBuf {
        self.reports().join(format!("traces_{}.jsonl", file_label(c)))
    }

    pub fn create(&self) -> Result<()> {
        for d in [self.checkpoints(), self.reports(), self.plots()] {
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(())
    }

    fn rel(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.root).unwrap_or(p).to_path_buf()
    }
}

fn file_label(c: Condition) -> &'static str {
    match c {
        Condition::Healthy => "healthy",
        Condition::Weak => "weak",
        Condition::WeakGlove => "weak_glove",
    }
}

/// Everything the stages need, resolved once from the config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub model: HandModel,
    pub demos: DemoSet,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let demos = config.demo_set()?;
        for name in config.prior_demos.iter().chain([&config.task_demo]) {
            if !demos.trajectories.contains_key(name) {
                return Err(Error::config(format!("unknown demonstration '{name}'")));
            }
        }
        Ok(Setup {
            config: config.clone(),
            model: config.hand_model()?,
            demos,
        })
    }

    pub fn env(&self, env: &EnvConfig, weakness: &WeaknessProfile, object_id: &str, demo_id: &str) -> Result<HandEnv> {
        let demo = self
            .demos
            .trajectories
            .get(demo_id)
            .ok_or_else(|| Error::config(format!("unknown demonstration '{demo_id}'")))?;
        let object = self.config.object(object_id)?;
        HandEnv::new(env.clone(), self.model.clone(), weakness.clone(), object, demo)
    }

    fn demo_object(&self, demo_id: &str) -> Result<String> {
        self.demos
            .trajectories
            .get(demo_id)
            .map(|d| d.object_id.clone())
            .ok_or_else(|| Error::config(format!("unknown demonstration '{demo_id}'")))
    }

    pub fn identity(&self) -> WeaknessProfile {
        WeaknessProfile::identity(self.model.num_muscles())
    }

    pub fn weakness(&self) -> Result<WeaknessProfile> {
        self.config.weakness.profile(&self.model)
    }

    /// One environment per prior demonstration, without observation noise.
    pub fn prior_eval_envs(&self) -> Result<Vec<HandEnv>> {
        let id = self.identity();
        self.config
            .prior_demos
            .iter()
            .map(|d| self.env(&self.config.env, &id, &self.demo_object(d)?, d))
            .collect()
    }

    /// `n_envs` prior environments assigned round-robin to the prior demos.
    pub fn prior_envs(&self) -> Result<Vec<EnvSlot>> {
        let env_cfg = self.config.prior_env();
        let id = self.identity();
        let demos = &self.config.prior_demos;
        let built: Vec<HandEnv> = demos
            .iter()
            .map(|d| self.env(&env_cfg, &id, &self.demo_object(d)?, d))
            .collect::<Result<_>>()?;
        Ok((0..self.config.prior.n_envs)
            .map(|i| Box::new(built[i % built.len()].clone()) as EnvSlot)
            .collect())
    }

    /// Environment of the fine-tuned task with the given strength profile.
    pub fn task_env(&self, weakness: &WeaknessProfile, object_id: Option<&str>, demo_id: Option<&str>) -> Result<HandEnv> {
        let demo_id = demo_id.unwrap_or(&self.config.task_demo);
        let demo_object = self.demo_object(demo_id)?;
        let object_id = object_id.unwrap_or(&demo_object);
        self.config.object(object_id)?;
        if object_id != demo_object {
            return Err(Error::config(format!(
                "demonstration '{demo_id}' manipulates '{demo_object}', not '{object_id}'"
            )));
        }
        self.env(&self.config.task_env(), weakness, object_id, demo_id)
    }
}

fn options(seed: u64, setup: &Setup, dir: Option<&Path>, stage: &str) -> TrainOptions {
    TrainOptions {
        seed,
        exec: setup.config.exec,
        checkpoint_dir: dir.map(Path::to_path_buf),
        stage: stage.into(),
    }
}

fn no_hook(_: &Checkpoint) -> Result<ControlFlow<()>> {
    Ok(ControlFlow::Continue(()))
}

/// Behaviour prior over all prior demonstrations, demo reward only.
pub fn train_prior(setup: &Setup, seed: u64, dir: Option<&Path>) -> Result<(Checkpoint, TrainReport)> {
    let mut envs = setup.prior_envs()?;
    train_with_hook(&mut envs, &setup.config.prior, TrainInit::Fresh, &options(seed, setup, dir, STAGE_PRIOR), &mut no_hook)
}

/// Task policy on the held-out demonstration, from `prior` or from scratch.
/// `hook` sees every iteration and may stop the run.
pub fn train_finetune(
    setup: &Setup,
    prior: Option<&Checkpoint>,
    object_id: Option<&str>,
    demo_id: Option<&str>,
    seed: u64,
    dir: Option<&Path>,
    hook: &mut dyn FnMut(&Checkpoint) -> Result<ControlFlow<()>>,
) -> Result<(Checkpoint, TrainReport)> {
    let env = setup.task_env(&setup.identity(), object_id, demo_id)?;
    let cfg = &setup.config.finetune;
    let mut envs: Vec<EnvSlot> = (0..cfg.n_envs).map(|_| Box::new(env.clone()) as EnvSlot).collect();
    let init = match prior {
        Some(ck) => {
            if ck.stage != STAGE_PRIOR {
                return Err(Error::validation(format!("fine-tuning needs a prior checkpoint, got stage '{}'", ck.stage)));
            }
            TrainInit::Params(ck.params.clone(), Some(ck.norm.clone()))
        }
        None => TrainInit::Fresh,
    };
    train_with_hook(&mut envs, cfg, init, &options(seed, setup, dir, STAGE_FINETUNED), hook)
}

/// Glove policy assisting the frozen, weakened hand. Returns the frozen digest too.
pub fn train_glove(
    setup: &Setup,
    hand: &Checkpoint,
    weakness: &WeaknessProfile,
    seed: u64,
    dir: Option<&Path>,
) -> Result<(Checkpoint, TrainReport, String)> {
    if hand.stage != STAGE_FINETUNED {
        return Err(Error::validation(format!(
            "glove training needs a finetuned hand checkpoint, got stage '{}'",
            hand.stage
        )));
    }
    let frozen = Arc::new(FrozenPolicy::new(hand.params.clone(), hand.norm.clone())?);
    let digest = frozen.digest().to_string();
    let env = setup.task_env(weakness, None, None)?;
    let glove = GloveModel::new(&setup.model, &setup.config.glove_model)?;
    let cfg = &setup.config.glove;
    let mut envs: Vec<EnvSlot> = (0..cfg.n_envs)
        .map(|_| Ok(Box::new(GloveEnv::new(env.clone(), frozen.clone(), glove.clone(), &digest)?) as EnvSlot))
        .collect::<Result<_>>()?;
    let mut hook = |_: &Checkpoint| {
        frozen.verify(&digest)?;
        Ok(ControlFlow::Continue(()))
    };
    let (ck, report) = train_with_hook(&mut envs, cfg, TrainInit::Fresh, &options(seed, setup, dir, STAGE_GLOVE), &mut hook)?;
    let after = FrozenPolicy::new(hand.params.clone(), hand.norm.clone())?;
    after.verify(&digest)?;
    Ok((ck, report, digest))
}

/// Traces of every condition that could run, and the ones that could not.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub traces: BTreeMap<Condition, Vec<EpisodeTrace>>,
    pub skipped: Vec<(Condition, String)>,
}

/// 30-trial (by default) deterministic evaluation of each condition.
pub fn evaluate(
    setup: &Setup,
    hand: &Checkpoint,
    glove: Option<&Checkpoint>,
    conditions: &[Condition],
) -> Result<Evaluation> {
    let frozen = FrozenPolicy::new(hand.params.clone(), hand.norm.clone())?;
    let glove_parts = match glove {
        Some(g) => {
            if g.stage != STAGE_GLOVE || g.params.act_dim != GLOVE_ACTION_DIM {
                return Err(Error::validation(format!("'{}' checkpoint is not a glove policy", g.stage)));
            }
            Some((
                FrozenPolicy::new(g.params.clone(), g.norm.clone())?,
                GloveModel::new(&setup.model, &setup.config.glove_model)?,
            ))
        }
        None => None,
    };
    let weak = setup.weakness()?;
    let eval = &setup.config.eval;
    let mut out = Evaluation {
        traces: BTreeMap::new(),
        skipped: Vec::new(),
    };
    for &c in conditions {
        let traces = match c {
            Condition::Healthy => run_trials(&setup.task_env(&setup.identity(), None, None)?, Controller::Hand(&frozen), c, eval)?,
            Condition::Weak => run_trials(&setup.task_env(&weak, None, None)?, Controller::Hand(&frozen), c, eval)?,
            Condition::WeakGlove => match &glove_parts {
                Some((policy, model)) => {
                    let controller = Controller::Assisted {
                        hand: &frozen,
                        glove_policy: policy,
                        glove: model,
                    };
                    run_trials(&setup.task_env(&weak, None, None)?, controller, c, eval)?
                }
                None => {
                    out.skipped.push((c, "no glove checkpoint".into()));
                    continue;
                }
            },
        };
        out.traces.insert(c, traces);
    }
    Ok(out)
}

/// Mean keypoint tracking error of the deterministic policy over `envs`
/// (one episode each, reset with `seed`).
pub fn tracking_error(ck: &Checkpoint, envs: &[HandEnv], seed: u64) -> Result<f64> {
    let frozen = FrozenPolicy::new(ck.params.clone(), ck.norm.clone())?;
    let mut total = 0.0;
    let mut n = 0usize;
    for env in envs {
        let mut e = env.clone();
        let trace = run_episode(&mut e, Controller::Hand(&frozen), seed, Condition::Healthy)?;
        total += trace.steps.iter().map(|s| s.demo_err).sum::<f64>();
        n += trace.steps.len();
    }
    if n == 0 {
        return Err(Error::usage("tracking error needs at least one environment"));
    }
    Ok(total / n as f64)
}

/// Environment steps at which the trailing `window`-iteration mean of
/// `metric` first reaches `threshold` or below.
pub fn steps_to_threshold(
    records: &[IterationRecord],
    metric: impl Fn(&IterationRecord) -> f64,
    threshold: f64,
    window: usize,
) -> Option<u64> {
    let w = window.max(1);
    (w - 1..records.len()).find_map(|i| {
        let mean = records[i + 1 - w..=i].iter().map(&metric).sum::<f64>() / w as f64;
        (mean <= threshold).then_some(records[i].env_steps)
    })
}

fn write_train_report(layout: &RunLayout, manifest: &mut RunManifest, stage: &str, report: &TrainReport) -> Result<()> {
    let jsonl = layout.reports().join(format!("{stage}_train.jsonl"));
    let csv = layout.reports().join(format!("{stage}_train.csv"));
    report.write_jsonl(&jsonl)?;
    report.write_csv(&csv)?;
    manifest.add_artifact(&layout.root, layout.rel(&jsonl))?;
    manifest.add_artifact(&layout.root, layout.rel(&csv))
}

fn open_run(setup: &Setup) -> Result<(RunLayout, RunManifest)> {
    let layout = RunLayout::new(setup.config.run_dir());
    layout.create()?;
    let cfg_path = layout.root.join("config.json");
    setup.config.save(&cfg_path)?;
    let mut manifest = RunManifest::open(&layout.root, &setup.config.run_id, &setup.config.digest()?)?;
    manifest.add_artifact(&layout.root, "config.json")?;
    Ok((layout, manifest))
}

fn finish_stage(
    layout: &RunLayout,
    manifest: &mut RunManifest,
    stage: &str,
    ck: &Checkpoint,
    report: &TrainReport,
    parent: Option<&Path>,
    frozen_digest: Option<String>,
) -> Result<PathBuf> {
    let path = layout.final_checkpoint(stage);
    ck.save(&path)?;
    let rel = layout.rel(&path);
    manifest.add_artifact(&layout.root, &rel)?;
    write_train_report(layout, manifest, stage, report)?;
    manifest.add_stage(
        stage,
        StageRecord {
            checkpoint: rel,
            seed: ck.seed,
            env_steps: ck.env_steps,
            parent: parent.map(|p| layout.rel(p)),
            frozen_digest,
        },
    );
    manifest.save(&layout.root)?;
    manifest.verify(&layout.root)?;
    Ok(path)
}

fn load_stage(path: &Path, stage: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::config(format!("{stage} checkpoint {} does not exist", path.display())));
    }
    load_checkpoint(path)
}

/// `prior-train`: writes `checkpoints/prior_final.json` and the training log.
pub fn cmd_prior_train(config: &ExperimentConfig) -> Result<PathBuf> {
    let setup = Setup::new(config)?;
    let (layout, mut manifest) = open_run(&setup)?;
    let (ck, report) = train_prior(&setup, config.seed, Some(&layout.checkpoints()))?;
    finish_stage(&layout, &mut manifest, STAGE_PRIOR, &ck, &report, None, None)
}

/// `finetune`: starts from `prior` (default: this run's prior checkpoint).
pub fn cmd_finetune(
    config: &ExperimentConfig,
    prior: Option<&Path>,
    object_id: Option<&str>,
    demo_id: Option<&str>,
) -> Result<PathBuf> {
    let setup = Setup::new(config)?;
    let (layout, mut manifest) = open_run(&setup)?;
    let prior_path = prior.map_or_else(|| layout.final_checkpoint(STAGE_PRIOR), Path::to_path_buf);
    let prior_ck = load_stage(&prior_path, STAGE_PRIOR)?;
    let (ck, report) = train_finetune(
        &setup,
        Some(&prior_ck),
        object_id,
        demo_id,
        config.seed,
        Some(&layout.checkpoints()),
        &mut no_hook,
    )?;
    finish_stage(&layout, &mut manifest, STAGE_FINETUNED, &ck, &report, Some(&prior_path), None)
}

/// `glove-train`: freezes `hand` (default: this run's finetuned checkpoint).
pub fn cmd_glove_train(config: &ExperimentConfig, hand: Option<&Path>, weakness: Option<&WeaknessSpec>) -> Result<PathBuf> {
    let setup = Setup::new(config)?;
    let (layout, mut manifest) = open_run(&setup)?;
    let hand_path = hand.map_or_else(|| layout.final_checkpoint(STAGE_FINETUNED), Path::to_path_buf);
    let hand_ck = load_stage(&hand_path, STAGE_FINETUNED)?;
    let profile = weakness.unwrap_or(&config.weakness).profile(&setup.model)?;
    let (ck, report, digest) = train_glove(&setup, &hand_ck, &profile, config.seed, Some(&layout.checkpoints()))?;
    finish_stage(&layout, &mut manifest, STAGE_GLOVE, &ck, &report, Some(&hand_path), Some(digest))
}

/// Report plus the conditions that were requested but could not run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutcome {
    pub report: MetricReport,
    pub skipped: Vec<(Condition, String)>,
}

fn write_metrics(layout: &RunLayout, manifest: &mut RunManifest, config: &ExperimentConfig, report: &MetricReport) -> Result<()> {
    let metrics = layout.reports().join(METRICS_FILE);
    let fig6 = layout.plots().join(PIP_WRIST_PLOT);
    let fig7 = layout.plots().join(ACCUMULATED_ERROR_PLOT);
    report.save(&metrics)?;
    report.write_pip_wrist_csv(&fig6, config.env.dt)?;
    report.write_accumulated_error_csv(&fig7, config.env.dt)?;
    for p in [metrics, fig6, fig7] {
        manifest.add_artifact(&layout.root, layout.rel(&p))?;
    }
    Ok(())
}

/// `evaluate`: runs the requested conditions and writes metrics, plots and traces.
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    hand: Option<&Path>,
    glove: Option<&Path>,
    conditions: &[Condition],
) -> Result<EvaluateOutcome> {
    let setup = Setup::new(config)?;
    let (layout, mut manifest) = open_run(&setup)?;
    let hand_path = hand.map_or_else(|| layout.final_checkpoint(STAGE_FINETUNED), Path::to_path_buf);
    let hand_ck = load_stage(&hand_path, STAGE_FINETUNED)?;
    let glove_path = glove.map_or_else(|| layout.final_checkpoint(STAGE_GLOVE), Path::to_path_buf);
    let glove_ck = if conditions.contains(&Condition::WeakGlove) && glove_path.exists() {
        let g = load_checkpoint(&glove_path)?;
        if let Some(expected) = manifest.stages.get(STAGE_GLOVE).and_then(|s| s.frozen_digest.clone()) {
            if glove.is_none() {
                FrozenPolicy::new(hand_ck.params.clone(), hand_ck.norm.clone())?.verify(&expected)?;
            }
        }
        Some(g)
    } else {
        None
    };
    let evaluation = evaluate(&setup, &hand_ck, glove_ck.as_ref(), conditions)?;
    let episodes = layout.reports().join("episodes");
    std::fs::create_dir_all(&episodes).map_err(|e| Error::io(&episodes, e))?;
    for (c, traces) in &evaluation.traces {
        let p = layout.traces(*c);
        save_traces(&p, traces)?;
        manifest.add_artifact(&layout.root, layout.rel(&p))?;
        for t in traces {
            let p = episodes.join(format!("{}_{:03}.csv", file_label(*c), t.seed));
            t.write_csv(&p)?;
        }
    }
    if evaluation.traces.is_empty() {
        return Err(Error::validation("no condition could be evaluated"));
    }
    let report = MetricReport::from_traces(&evaluation.traces, config.eval.punish, config.eval.far)?;
    write_metrics(&layout, &mut manifest, config, &report)?;
    manifest.save(&layout.root)?;
    manifest.verify(&layout.root)?;
    Ok(EvaluateOutcome {
        report,
        skipped: evaluation.skipped,
    })
}

/// `report`: rebuilds metrics and plots from the saved traces.
pub fn cmd_report(config: &ExperimentConfig) -> Result<MetricReport> {
    let setup = Setup::new(config)?;
    let (layout, mut manifest) = open_run(&setup)?;
    let mut traces = BTreeMap::new();
    for c in Condition::ALL {
        let p = layout.traces(c);
        if p.exists() {
            traces.insert(c, load_traces(&p)?);
        }
    }
    if traces.is_empty() {
        return Err(Error::config(format!("no saved traces under {}", layout.reports().display())));
    }
    for ts in traces.values() {
        for t in ts {
            t.validate(config.env.horizon)?;
        }
    }
    let report = MetricReport::from_traces(&traces, config.eval.punish, config.eval.far)?;
    write_metrics(&layout, &mut manifest, config, &report)?;
    manifest.save(&layout.root)?;
    manifest.verify(&layout.root)?;
    Ok(report)
}

/// `demo-gen`: writes every configured demonstration as JSON and CSV.
pub fn cmd_demo_gen(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let setup = Setup::new(config)?;
    let (layout, mut manifest) = open_run(&setup)?;
    let dir = layout.demos();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = Vec::new();
    for (name, demo) in &setup.demos.trajectories {
        let json = dir.join(format!("{name}.json"));
        let csv = dir.join(format!("{name}.csv"));
        save_demo(demo, &json)?;
        demo.write_csv(&csv)?;
        manifest.add_artifact(&layout.root, layout.rel(&json))?;
        manifest.add_artifact(&layout.root, layout.rel(&csv))?;
        out.push(json);
    }
    manifest.save(&layout.root)?;
    Ok(out)
}

/// Every stage in order, then evaluation of the configured conditions.
pub fn run_all(config: &ExperimentConfig) -> Result<EvaluateOutcome> {
    cmd_prior_train(config)?;
    cmd_finetune(config, None, None, None)?;
    if config.conditions.contains(&Condition::WeakGlove) {
        cmd_glove_train(config, None, None)?;
    }
    cmd_evaluate(config, None, None, &config.conditions)
}
