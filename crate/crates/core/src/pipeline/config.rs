use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biomech::{HandModel, WeaknessProfile};
use crate::env::{EnvConfig, RewardMode, RewardParams};
use crate::error::{Error, Result};
use crate::eval::{Condition, EvalConfig};
use crate::exoglove::GloveParams;
use crate::par::Execution;
use crate::rl::PPOConfig;
use crate::trajio::{synth_demo, DemoSet, SynthKind, SynthParams};
use crate::world::ObjectSpec;

pub const CONFIG_SCHEMA: u32 = 1;

/// A generated demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDemoSpec {
    pub name: String,
    pub kind: SynthKind,
    #[serde(default)]
    pub params: SynthParams,
}

/// Strength profile applied before glove training and in the weak conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeaknessSpec {
    /// Same factor for every muscle.
    Uniform(f64),
    /// One factor per muscle, in model order.
    PerMuscle(Vec<f64>),
}

impl WeaknessSpec {
    pub fn profile(&self, model: &HandModel) -> Result<WeaknessProfile> {
        let p = match self {
            WeaknessSpec::Uniform(f) => WeaknessProfile::uniform(model.num_muscles(), *f),
            WeaknessSpec::PerMuscle(s) => WeaknessProfile { scale: s.clone() },
        };
        p.validate(model.num_muscles())?;
        Ok(p)
    }
}

/// Everything a pipeline run depends on. Stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub run_id: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Hand model file; the desk preset when absent.
    pub model: Option<PathBuf>,
    /// Directory of recorded demonstrations (`*.json`, keyed by file stem).
    pub demo_dir: Option<PathBuf>,
    pub synthetic_demos: Vec<SynthDemoSpec>,
    /// Demonstrations tracked jointly by the prior.
    pub prior_demos: Vec<String>,
    /// Held-out demonstration of the fine-tuned task.
    pub task_demo: String,
    pub env: EnvConfig,
    /// Observation noise during prior training (fraction of joint range).
    pub prior_noise: f64,
    pub prior: PPOConfig,
    pub finetune: PPOConfig,
    pub glove: PPOConfig,
    pub glove_model: GloveParams,
    pub weakness: WeaknessSpec,
    pub eval: EvalConfig,
    pub conditions: Vec<Condition>,
    pub exec: Execution,
}

fn lift(name: &str, xy: [f64; 2], height: f64) -> SynthDemoSpec {
    SynthDemoSpec {
        name: name.into(),
        kind: SynthKind::Lift,
        params: SynthParams {
            object_xy: xy,
            lift_height: height,
            ..SynthParams::default()
        },
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale preset: four prior demos and a held-out tomato-can lift.
    pub fn desk() -> Self {
        let ppo = |total_steps: u64| PPOConfig {
            total_steps,
            epochs: 4,
            init_log_std: -1.0,
            ..PPOConfig::default()
        };
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            run_id: "desk".into(),
            out_dir: PathBuf::from("out"),
            seed: 1,
            model: None,
            demo_dir: None,
            synthetic_demos: vec![
                SynthDemoSpec {
                    name: "reach".into(),
                    kind: SynthKind::Reach,
                    params: SynthParams::default(),
                },
                SynthDemoSpec {
                    name: "arc".into(),
                    kind: SynthKind::Arc,
                    params: SynthParams::default(),
                },
                lift("lift_near", [0.03, 0.02], 0.1),
                lift("lift_far", [-0.03, -0.02], 0.2),
                lift("lift_task", [0.0, 0.0], 0.15),
            ],
            prior_demos: vec!["reach".into(), "arc".into(), "lift_near".into(), "lift_far".into()],
            task_demo: "lift_task".into(),
            env: EnvConfig {
                noise_std_frac: 0.0,
                reward: RewardParams {
                    lambda1: 3.0,
                    alpha1: 20.0,
                    ..RewardParams::default()
                },
                ..EnvConfig::default()
            },
            prior_noise: 0.03,
            prior: ppo(2_000_000),
            finetune: ppo(3_000_000),
            glove: ppo(2_000_000),
            glove_model: GloveParams::default(),
            weakness: WeaknessSpec::Uniform(0.5),
            eval: EvalConfig::default(),
            conditions: vec![Condition::Healthy, Condition::Weak, Condition::WeakGlove],
            exec: Execution::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// sha256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::config(format!("unsupported config schema {}", self.schema)));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id == ".." {
            return Err(Error::config(format!("run id '{}' is not a plain directory name", self.run_id)));
        }
        if let Some(p) = &self.model {
            if !p.exists() {
                return Err(Error::config(format!("hand model file {} does not exist", p.display())));
            }
        }
        if let Some(d) = &self.demo_dir {
            if !d.is_dir() {
                return Err(Error::config(format!("demo directory {} does not exist", d.display())));
            }
        }
        self.env.validate()?;
        if !(self.prior_noise >= 0.0 && self.prior_noise.is_finite()) {
            return Err(Error::config("prior_noise must be non-negative"));
        }
        for c in [&self.prior, &self.finetune, &self.glove] {
            c.validate()?;
        }
        self.eval.validate()?;
        let mut names: Vec<&str> = self.synthetic_demos.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("synthetic demo names must be unique"));
        }
        for d in &self.synthetic_demos {
            d.params.validate()?;
        }
        if self.prior_demos.is_empty() {
            return Err(Error::config("the prior needs at least one demonstration"));
        }
        if self.demo_dir.is_none() {
            for name in self.prior_demos.iter().chain([&self.task_demo]) {
                if !names.contains(&name.as_str()) {
                    return Err(Error::config(format!("unknown demonstration '{name}'")));
                }
            }
        }
        Ok(())
    }

    pub fn hand_model(&self) -> Result<HandModel> {
        match &self.model {
            Some(p) => HandModel::load(p),
            None => Ok(HandModel::desk_preset()),
        }
    }

    /// Synthetic demos plus any recorded ones; recorded names win.
    pub fn demo_set(&self) -> Result<DemoSet> {
        let mut set = DemoSet::new();
        for d in &self.synthetic_demos {
            set.insert(d.name.clone(), synth_demo(d.kind, &d.params)?);
        }
        if let Some(dir) = &self.demo_dir {
            for (name, t) in DemoSet::load_dir(dir)?.trajectories {
                set.insert(name, t);
            }
        }
        set.validate()?;
        Ok(set)
    }

    /// Known objects: the presets and every object named by a synthetic demo.
    pub fn objects(&self) -> BTreeMap<String, ObjectSpec> {
        let mut out: BTreeMap<String, ObjectSpec> =
            ObjectSpec::presets().into_iter().map(|o| (o.name.clone(), o)).collect();
        for d in &self.synthetic_demos {
            out.insert(d.params.object.name.clone(), d.params.object.clone());
        }
        out
    }

    pub fn object(&self, id: &str) -> Result<ObjectSpec> {
        self.objects()
            .remove(id)
            .ok_or_else(|| Error::config(format!("unknown object '{id}'")))
    }

    /// Environment settings of the prior stage: demo reward only, noisy observations.
    pub fn prior_env(&self) -> EnvConfig {
        EnvConfig {
            reward_mode: RewardMode::DemoOnly,
            noise_std_frac: self.prior_noise,
            ..self.env.clone()
        }
    }

    /// Environment settings of fine-tuning, glove training and evaluation.
    pub fn task_env(&self) -> EnvConfig {
        EnvConfig {
            reward_mode: RewardMode::DemoPlusObj,
            ..self.env.clone()
        }
    }

    /// Output directory of this run.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }
}
