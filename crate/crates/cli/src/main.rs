//! `exohand` command line: one subcommand per pipeline stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exohand::eval::Condition;
use exohand::pipeline::{self, ExperimentConfig, WeaknessSpec};
use exohand::{Error, Result};

#[derive(Parser)]
#[command(name = "exohand", version, about = "Hand simulator, PPO trainer and assistive glove pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); the desk preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory (runs go to <out>/<run-id>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the behaviour prior on the prior demonstrations.
    PriorTrain(Common),
    /// Fine-tune the prior on one object trajectory.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Prior checkpoint (default: the run's prior).
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        object: Option<String>,
        #[arg(long)]
        demo: Option<String>,
    },
    /// Train the glove controller around the frozen, weakened hand.
    GloveTrain {
        #[command(flatten)]
        common: Common,
        /// Finetuned hand checkpoint (default: the run's).
        #[arg(long)]
        hand: Option<PathBuf>,
        /// Uniform strength factor in (0, 1] replacing the config profile.
        #[arg(long)]
        weakness: Option<f64>,
    },
    /// Evaluate the conditions and write metrics, plots and traces.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hand: Option<PathBuf>,
        #[arg(long)]
        glove: Option<PathBuf>,
        /// Comma-separated subset of healthy,weak,weak+glove.
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<String>>,
    },
    /// Write the configured demonstrations as JSON and CSV.
    DemoGen(Common),
    /// Rebuild metrics and plots from saved traces.
    Report(Common),
    /// Run every stage in order.
    Run(Common),
    /// Print the resolved config.
    Config(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(outcome: &pipeline::EvaluateOutcome) -> Result<()> {
    for c in &outcome.report.conditions {
        println!(
            "{:<11} success {:.3}  tasks {:.2}  accumulated error {:.2}",
            c.condition.label(),
            c.success_rate,
            c.task_success_fraction,
            c.final_accumulated_error
        );
    }
    if let Some(r) = outcome.report.restoration_ratio {
        println!("restoration ratio {r:.3}");
    }
    if outcome.skipped.is_empty() {
        return Ok(());
    }
    for (c, why) in &outcome.skipped {
        eprintln!("skipped {}: {why}", c.label());
    }
    Err(Error::validation(format!("{} condition(s) skipped", outcome.skipped.len())))
}

fn run(cli: Cli) -> Result<()> {
    exohand::par::init_threads()?;
    match cli.command {
        Command::PriorTrain(c) => {
            let p = pipeline::cmd_prior_train(&load_config(&c)?)?;
            println!("{}", p.display());
        }
        Command::Finetune {
            common,
            prior,
            object,
            demo,
        } => {
            let p = pipeline::cmd_finetune(&load_config(&common)?, prior.as_deref(), object.as_deref(), demo.as_deref())?;
            println!("{}", p.display());
        }
        Command::GloveTrain { common, hand, weakness } => {
            let w = weakness.map(WeaknessSpec::Uniform);
            let p = pipeline::cmd_glove_train(&load_config(&common)?, hand.as_deref(), w.as_ref())?;
            println!("{}", p.display());
        }
        Command::Evaluate {
            common,
            hand,
            glove,
            conditions,
        } => {
            let cfg = load_config(&common)?;
            let conditions = match conditions {
                Some(list) => list.iter().map(|s| Condition::parse(s.trim())).collect::<Result<Vec<_>>>()?,
                None => cfg.conditions.clone(),
            };
            let outcome = pipeline::cmd_evaluate(&cfg, hand.as_deref(), glove.as_deref(), &conditions)?;
            print_report(&outcome)?;
        }
        Command::DemoGen(c) => {
            for p in pipeline::cmd_demo_gen(&load_config(&c)?)? {
                println!("{}", p.display());
            }
        }
        Command::Report(c) => {
            let report = pipeline::cmd_report(&load_config(&c)?)?;
            print_report(&pipeline::EvaluateOutcome {
                report,
                skipped: Vec::new(),
            })?;
        }
        Command::Run(c) => {
            let outcome = pipeline::run_all(&load_config(&c)?)?;
            print_report(&outcome)?;
        }
        Command::Config(c) => println!("{}", load_config(&c)?.to_json()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
