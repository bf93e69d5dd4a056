//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Criteria 5-10 train real policies at desk scale and take most of an hour
//! on a single core. `EXOHAND_ACCEPTANCE_SCALE` (default 1) multiplies every
//! training budget, for smoke runs of the harness itself. Failing criteria are
//! reported but only change the exit status when `EXOHAND_ACCEPTANCE_STRICT`
//! is set.

mod common;

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::oracles;
use exohand::eval::{Condition, ConditionReport, MetricReport};
use exohand::pipeline::*;
use exohand::rl::{load_checkpoint, Checkpoint, IterationRecord};

const REWARD_TOL: f64 = 1e-12;
const REWARD_CASES: usize = 10_000;
const GAE_TOL: f64 = 1e-10;
const GAE_EPISODES: usize = 1000;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_NETS: usize = 30;
const QUAT_STEPS: usize = 100_000;

const PRIOR_SEEDS: [u64; 3] = [1, 2, 3];
const PRIOR_ERROR_RATIO: f64 = 0.40;
/// Trailing-mean keypoint error (m) that counts as "learned" in criterion 6.
const FINETUNE_ERR_THRESHOLD: f64 = 0.05;
const FINETUNE_WINDOW: usize = 5;
const PRIOR_STEP_RATIO: f64 = 0.70;
const WEAK_DROP: f64 = 0.30;
const GLOVE_GAIN: f64 = 0.20;
const RESTORATION: f64 = 0.70;
const PIP_DIP: f64 = 0.10;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn timed(id: usize, name: &'static str, budget_s: Option<f64>, f: impl FnOnce() -> Result<(bool, String), String>) -> Line {
    eprintln!("[acceptance] criterion {id}: {name}");
    let t0 = Instant::now();
    let out = f();
    let secs = t0.elapsed().as_secs_f64();
    let (mut pass, mut detail) = out.unwrap_or_else(|e| (false, format!("error: {e}")));
    if let Some(b) = budget_s {
        if secs > b {
            pass = false;
            detail.push_str(&format!("; over the {b:.0} s budget"));
        }
    }
    Line {
        id,
        name,
        pass,
        detail,
        secs,
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn scale() -> f64 {
    std::env::var("EXOHAND_ACCEPTANCE_SCALE")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0)
}

fn desk(out: &Path, scale: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.out_dir = out.to_path_buf();
    for c in [&mut cfg.prior, &mut cfg.finetune, &mut cfg.glove] {
        c.total_steps = (c.total_steps as f64 * scale) as u64;
        c.checkpoint_every = 0;
    }
    cfg
}

fn physics_suite() -> Result<(bool, String), String> {
    let checks: [(&str, common::Check); 7] = [
        ("activation bounds", common::activation_bounds(101, 200)),
        ("torque linearity", common::torque_linearity(102, 200)),
        ("energy dissipation", common::energy_dissipation(103, 50)),
        ("bone lengths", common::bone_lengths(104, 1000)),
        ("friction cone", common::contact_cone(105, 5000)),
        ("action-reaction", common::action_reaction(106, 500)),
        ("quaternion drift", common::quaternion_drift(QUAT_STEPS)),
    ];
    let failed: Vec<String> = checks
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok((true, format!("{} invariant checks hold", checks.len())))
    } else {
        Ok((false, failed.join("; ")))
    }
}

fn condition<'a>(r: &'a MetricReport, c: Condition) -> Result<&'a ConditionReport, String> {
    r.conditions
        .iter()
        .find(|x| x.condition == c)
        .ok_or_else(|| format!("no {c} results"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct Runs {
    cfg: ExperimentConfig,
    report: Result<MetricReport, String>,
}

fn main() {
    let scale = scale();
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    let mut lines = Vec::new();

    lines.push(timed(1, "reward and encoding oracles", Some(5.0), || {
        let w = oracles::reward_terms(1, REWARD_CASES).map_err(err)?;
        Ok((w <= REWARD_TOL, format!("max |diff| {w:.2e} over {REWARD_CASES} cases (tol {REWARD_TOL:.0e})")))
    }));
    lines.push(timed(2, "GAE brute-force equivalence", Some(5.0), || {
        let w = oracles::gae_lambda_one(2, GAE_EPISODES).map_err(err)?;
        Ok((w <= GAE_TOL, format!("max |diff| {w:.2e} over {GAE_EPISODES} episodes (tol {GAE_TOL:.0e})")))
    }));
    lines.push(timed(3, "gradient fidelity", Some(30.0), || {
        let w = oracles::gradient_fidelity(3, GRAD_NETS).map_err(err)?;
        Ok((w <= GRAD_REL_TOL, format!("max relative error {w:.2e} over {GRAD_NETS} nets (tol {GRAD_REL_TOL:.0e})")))
    }));
    lines.push(timed(4, "physics invariants", Some(60.0), physics_suite));

    // One full pipeline run feeds criteria 5-10.
    eprintln!("[acceptance] full desk pipeline, run A (budget scale {scale})");
    let t_a = Instant::now();
    let run_a = {
        let cfg = desk(&root.join("a"), scale);
        let report = run_all(&cfg).map(|o| o.report).map_err(err);
        Runs { cfg, report }
    };
    let secs_a = t_a.elapsed().as_secs_f64();

    let mut priors: Vec<Checkpoint> = Vec::new();
    lines.push(timed(5, "prior learning", None, || {
        let cfg = &run_a.cfg;
        let setup = Setup::new(cfg).map_err(err)?;
        let envs = setup.prior_eval_envs().map_err(err)?;
        let mut untrained_cfg = cfg.clone();
        untrained_cfg.prior.total_steps = 0;
        let untrained_setup = Setup::new(&untrained_cfg).map_err(err)?;
        let mut parts = Vec::new();
        let mut ok = true;
        for seed in PRIOR_SEEDS {
            let trained = if seed == cfg.seed {
                load_checkpoint(&RunLayout::new(cfg.run_dir()).final_checkpoint(STAGE_PRIOR)).map_err(err)?
            } else {
                eprintln!("[acceptance] prior seed {seed}");
                train_prior(&setup, seed, None).map_err(err)?.0
            };
            let init = train_prior(&untrained_setup, seed, None).map_err(err)?.0;
            let e0 = tracking_error(&init, &envs, 0).map_err(err)?;
            let e1 = tracking_error(&trained, &envs, 0).map_err(err)?;
            ok &= e1 <= PRIOR_ERROR_RATIO * e0;
            parts.push(format!("seed {seed}: {:.4} -> {:.4} m ({:.0}%)", e0, e1, 100.0 * e1 / e0));
            priors.push(trained);
        }
        Ok((ok, format!("{} (need <= {:.0}% for 3/3)", parts.join(", "), 100.0 * PRIOR_ERROR_RATIO)))
    }));

    lines.push(timed(6, "prior advantage", None, || {
        let cfg = &run_a.cfg;
        let setup = Setup::new(cfg).map_err(err)?;
        if priors.len() != PRIOR_SEEDS.len() {
            return Err("criterion 5 did not produce the priors".into());
        }
        let cap = cfg.finetune.total_steps;
        let metric = |r: &IterationRecord| r.demo_err;
        let run = |prior: Option<&Checkpoint>, seed: u64| -> Result<u64, String> {
            let mut reached = None;
            let mut hook = |ck: &Checkpoint| {
                reached = steps_to_threshold(&ck.records, metric, FINETUNE_ERR_THRESHOLD, FINETUNE_WINDOW);
                Ok(if reached.is_some() { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
            };
            train_finetune(&setup, prior, None, None, seed, None, &mut hook).map_err(err)?;
            Ok(reached.unwrap_or(cap))
        };
        let mut ratios = Vec::new();
        let mut parts = Vec::new();
        for (seed, prior) in PRIOR_SEEDS.iter().zip(&priors) {
            eprintln!("[acceptance] fine-tune seed {seed} from prior and from scratch");
            let with = run(Some(prior), *seed)?;
            let without = run(None, *seed)?;
            ratios.push(with as f64 / without as f64);
            parts.push(format!("seed {seed}: {with} vs {without}"));
        }
        let m = median(ratios);
        Ok((
            m <= PRIOR_STEP_RATIO,
            format!(
                "steps to {FINETUNE_ERR_THRESHOLD} m with/without prior {}; median ratio {m:.2} (need <= {PRIOR_STEP_RATIO}; cap {cap} counts for runs that never reach it)",
                parts.join(", ")
            ),
        ))
    }));

    lines.push(timed(7, "weakening degrades", None, || {
        let r = run_a.report.as_ref()?;
        let h = condition(r, Condition::Healthy)?.success_rate;
        let w = condition(r, Condition::Weak)?.success_rate;
        Ok((
            h - w >= WEAK_DROP,
            format!("healthy {h:.3}, weak {w:.3}, drop {:.1} pp (need >= {:.0})", 100.0 * (h - w), 100.0 * WEAK_DROP),
        ))
    }));

    lines.push(timed(8, "glove restores", None, || {
        let r = run_a.report.as_ref()?;
        let w = condition(r, Condition::Weak)?;
        let g = condition(r, Condition::WeakGlove)?;
        let ratio = r.restoration_ratio.ok_or("no restoration ratio")?;
        let gain = g.success_rate - w.success_rate;
        let order = w.final_accumulated_error >= g.final_accumulated_error;
        Ok((
            gain >= GLOVE_GAIN && ratio >= RESTORATION && order,
            format!(
                "weak {:.3}, weak+glove {:.3} (+{:.1} pp, need {:.0}), restoration {ratio:.3} (need {RESTORATION}), final accumulated error weak {:.1} vs weak+glove {:.1}",
                w.success_rate,
                g.success_rate,
                100.0 * gain,
                100.0 * GLOVE_GAIN,
                w.final_accumulated_error,
                g.final_accumulated_error
            ),
        ))
    }));

    lines.push(timed(9, "PIP-wrist shape", None, || {
        let r = run_a.report.as_ref()?;
        let h = &condition(r, Condition::Healthy)?.pip_wrist_mean;
        let w = &condition(r, Condition::Weak)?.pip_wrist_mean;
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let (h0, hmin, hend) = (h[0], min(h), *h.last().ok_or("empty curve")?);
        let wmin = min(w);
        let dip = (h0 - hmin) / h0;
        let recovers = hend > hmin + 1e-6;
        let plot = RunLayout::new(run_a.cfg.run_dir()).plots().join(PIP_WRIST_PLOT);
        let ok = dip >= PIP_DIP && recovers && wmin > hmin && plot.exists();
        Ok((
            ok,
            format!(
                "healthy {h0:.4} -> min {hmin:.4} ({:.1}% dip) -> end {hend:.4}; weak min {wmin:.4}; csv {}",
                100.0 * dip,
                if plot.exists() { "written" } else { "missing" }
            ),
        ))
    }));

    lines.push(timed(10, "determinism", None, || {
        let a = run_a.report.as_ref()?;
        eprintln!("[acceptance] full desk pipeline, run B");
        let cfg_b = desk(&root.join("b"), scale);
        run_all(&cfg_b).map_err(err)?;
        let path = |c: &ExperimentConfig| RunLayout::new(c.run_dir()).reports().join(METRICS_FILE);
        let bytes_a = std::fs::read(path(&run_a.cfg)).map_err(err)?;
        let bytes_b = std::fs::read(path(&cfg_b)).map_err(err)?;
        let same = bytes_a == bytes_b && MetricReport::load(&path(&cfg_b)).map_err(err)? == *a;
        Ok((same, format!("metrics.json {} ({} bytes)", if same { "byte-identical" } else { "differs" }, bytes_a.len())))
    }));

    println!("acceptance (training budget scale {scale}; shared pipeline run {secs_a:.0} s)");
    for l in &lines {
        println!(
            "criterion {:>2} {} {}: {} [{:.1} s]",
            l.id,
            if l.pass { "PASS" } else { "FAIL" },
            l.name,
            l.detail,
            l.secs
        );
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("{passed}/{} criteria passed", lines.len());
    if passed < lines.len() && std::env::var_os("EXOHAND_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
