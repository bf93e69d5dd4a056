//! Success rate, accumulated error, PIP–wrist distance and restoration
//! ratio, plus the repeated-trial runner that produces the traces.

mod runner;

pub use runner::{run_episode, run_trials, Controller, EvalConfig};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::biomech::{KP_MIDDLE_PIP, KP_WRIST, NUM_KEYPOINTS};
use crate::error::{Error, Result};

/// Object position tolerance of a successful step (m).
pub const SUCCESS_TOL: f64 = 0.025;
/// Per-episode success rate above which a task counts as solved.
pub const TASK_SUCCESS_RATE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "healthy")]
    Healthy,
    #[serde(rename = "weak")]
    Weak,
    #[serde(rename = "weak+glove")]
    WeakGlove,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Healthy, Condition::Weak, Condition::WeakGlove];

    pub fn label(self) -> &'static str {
        match self {
            Condition::Healthy => "healthy",
            Condition::Weak => "weak",
            Condition::WeakGlove => "weak+glove",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::config(format!("unknown condition {s:?}")))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub obj_pos_err: f64,
    pub obj_ang_err: f64,
    pub demo_err: f64,
    pub reward: f64,
    pub keypoints: Vec<[f64; 3]>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub condition: Condition,
    pub steps: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.steps.len() > horizon {
            return Err(Error::validation(format!("trace has {} steps, horizon is {horizon}", self.steps.len())));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.obj_pos_err >= 0.0 && s.obj_ang_err >= 0.0 && s.demo_err >= 0.0) {
                return Err(Error::validation(format!("step {i}: errors must be finite and non-negative")));
            }
            if s.keypoints.len() != NUM_KEYPOINTS {
                return Err(Error::validation(format!("step {i}: expected {NUM_KEYPOINTS} keypoints")));
            }
        }
        Ok(())
    }

    /// Columns `t, obj_err, demo_err, reward, success`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::validation(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["t", "obj_err", "demo_err", "reward", "success"]).map_err(csv_err)?;
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                s.obj_pos_err.to_string(),
                s.demo_err.to_string(),
                s.reward.to_string(),
                u8::from(s.success).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fraction of steps whose object position error is within [`SUCCESS_TOL`].
pub fn success_rate(trace: &EpisodeTrace) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::validation("success rate of an empty trace"));
    }
    let ok = trace.steps.iter().filter(|s| s.obj_pos_err <= SUCCESS_TOL).count();
    Ok(ok as f64 / trace.len() as f64)
}

pub fn task_success(rate: f64) -> bool {
    rate > TASK_SUCCESS_RATE
}

/// `c_t = c_{t-1} + e_t + (punish if e_t > far)`.
pub fn accumulated_error(trace: &EpisodeTrace, punish: f64, far: f64) -> Vec<f64> {
    let mut c = 0.0;
    trace
        .steps
        .iter()
        .map(|s| {
            c += s.obj_pos_err;
            if s.obj_pos_err > far {
                c += punish;
            }
            c
        })
        .collect()
}

/// Middle-finger PIP to wrist distance per step.
pub fn pip_wrist_series(trace: &EpisodeTrace) -> Vec<f64> {
    trace
        .steps
        .iter()
        .map(|s| {
            let (p, w) = (s.keypoints[KP_MIDDLE_PIP], s.keypoints[KP_WRIST]);
            ((p[0] - w[0]).powi(2) + (p[1] - w[1]).powi(2) + (p[2] - w[2]).powi(2)).sqrt()
        })
        .collect()
}

/// Mean and sample standard deviation over traces of equal length.
pub fn mean_std(series: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = series.first() else {
        return Err(Error::validation("no series to aggregate"));
    };
    let n = first.len();
    if series.iter().any(|s| s.len() != n) {
        return Err(Error::validation("series have different lengths"));
    }
    let k = series.len() as f64;
    let mut mean = vec![0.0; n];
    let mut std = vec![0.0; n];
    for t in 0..n {
        let m = series.iter().map(|s| s[t]).sum::<f64>() / k;
        mean[t] = m;
        if series.len() > 1 {
            std[t] = (series.iter().map(|s| (s[t] - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        }
    }
    Ok((mean, std))
}

/// Mean and sample std of the middle PIP–wrist distance across trials.
pub fn pip_wrist_distance(traces: &[EpisodeTrace]) -> Result<(Vec<f64>, Vec<f64>)> {
    let series: Vec<Vec<f64>> = traces.iter().map(pip_wrist_series).collect();
    mean_std(&series)
}

pub fn restoration_ratio(glove_rate: f64, healthy_rate: f64) -> Result<f64> {
    if !(healthy_rate > 0.0) {
        return Err(Error::validation("restoration ratio needs a positive healthy success rate"));
    }
    Ok(glove_rate / healthy_rate)
}

/// Aggregates for one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub trials: usize,
    /// Mean per-trial success rate.
    pub success_rate: f64,
    pub trial_success_rates: Vec<f64>,
    /// Fraction of trials above the task-success threshold.
    pub task_success_fraction: f64,
    pub accumulated_error: Vec<f64>,
    pub final_accumulated_error: f64,
    pub pip_wrist_mean: Vec<f64>,
    pub pip_wrist_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub trial_count: usize,
    pub punish: f64,
    pub far: f64,
    pub conditions: Vec<ConditionReport>,
    /// Present when healthy and weak+glove were both evaluated.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub restoration_ratio: Option<f64>,
}

impl ConditionReport {
    pub fn from_traces(condition: Condition, traces: &[EpisodeTrace], punish: f64, far: f64) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::validation(format!("no traces for condition {condition}")));
        }
        let rates = traces.iter().map(success_rate).collect::<Result<Vec<_>>>()?;
        let acc: Vec<Vec<f64>> = traces.iter().map(|t| accumulated_error(t, punish, far)).collect();
        let (acc_mean, _) = mean_std(&acc)?;
        let (pm, ps) = pip_wrist_distance(traces)?;
        let k = traces.len() as f64;
        Ok(ConditionReport {
            condition,
            trials: traces.len(),
            success_rate: rates.iter().sum::<f64>() / k,
            task_success_fraction: rates.iter().filter(|r| task_success(**r)).count() as f64 / k,
            trial_success_rates: rates,
            final_accumulated_error: acc_mean.last().copied().unwrap_or(0.0),
            accumulated_error: acc_mean,
            pip_wrist_mean: pm,
            pip_wrist_std: ps,
        })
    }
}

impl MetricReport {
    /// Pure function of the traces.
    pub fn from_traces(traces: &BTreeMap<Condition, Vec<EpisodeTrace>>, punish: f64, far: f64) -> Result<Self> {
        let conditions = traces
            .iter()
            .map(|(c, t)| ConditionReport::from_traces(*c, t, punish, far))
            .collect::<Result<Vec<_>>>()?;
        let rate = |c: Condition| conditions.iter().find(|r| r.condition == c).map(|r| r.success_rate);
        let restoration_ratio = match (rate(Condition::WeakGlove), rate(Condition::Healthy)) {
            (Some(g), Some(h)) => Some(restoration_ratio(g, h)?),
            _ => None,
        };
        Ok(MetricReport {
            trial_count: conditions.iter().map(|c| c.trials).max().unwrap_or(0),
            punish,
            far,
            conditions,
            restoration_ratio,
        })
    }

    pub fn condition(&self, c: Condition) -> Option<&ConditionReport> {
        self.conditions.iter().find(|r| r.condition == c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    /// PIP–wrist mean and std per condition, one row per step.
    pub fn write_pip_wrist_csv(&self, path: &Path, dt: f64) -> Result<()> {
        let mut header = vec!["t".to_string()];
        for c in &self.conditions {
            header.push(format!("{}_mean", c.condition));
            header.push(format!("{}_std", c.condition));
        }
        let rows = self.conditions.iter().map(|c| c.pip_wrist_mean.len()).max().unwrap_or(0);
        write_table(path, &header, rows, |t| {
            let mut row = vec![(t + 1) as f64 * dt];
            for c in &self.conditions {
                row.push(c.pip_wrist_mean.get(t).copied().unwrap_or(f64::NAN));
                row.push(c.pip_wrist_std.get(t).copied().unwrap_or(f64::NAN));
            }
            row
        })
    }

    /// Mean accumulated error per condition, one row per step.
    pub fn write_accumulated_error_csv(&self, path: &Path, dt: f64) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.conditions.iter().map(|c| c.condition.to_string()));
        let rows = self.conditions.iter().map(|c| c.accumulated_error.len()).max().unwrap_or(0);
        write_table(path, &header, rows, |t| {
            let mut row = vec![(t + 1) as f64 * dt];
            row.extend(self.conditions.iter().map(|c| c.accumulated_error.get(t).copied().unwrap_or(f64::NAN)));
            row
        })
    }
}

fn write_table(path: &Path, header: &[String], rows: usize, row: impl Fn(usize) -> Vec<f64>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::validation(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for t in 0..rows {
        w.write_record(row(t).iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One trace per line.
pub fn save_traces(path: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    let mut text = String::new();
    for t in traces {
        text.push_str(&serde_json::to_string(t)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_traces(path: &Path) -> Result<Vec<EpisodeTrace>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}
