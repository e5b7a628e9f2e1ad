use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use imap_core::config::{load_config, ExperimentConfig, Overrides};
use imap_core::harness::{self, Evaluation};
use imap_core::io::{self, RunOutputs};
use imap_core::{PolicyHandle, RegularizerKind};
use serde::Serialize;

/// Adversarial-policy attacks on frozen RL victims.
#[derive(Parser, Debug)]
#[command(name = "imap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a victim with PPO on the unattacked task and save its checkpoint.
    VictimTrain(Common),
    /// Train an adversary against the configured victim.
    Attack(Common),
    /// Evaluate a saved adversary against the configured victim.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Adversary checkpoint to evaluate.
        #[arg(long, value_name = "PATH")]
        adversary: PathBuf,
    },
    /// Evaluate the uniformly random adversary.
    BaselineRandom(Common),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the regularizer kind: none, sc, pc, r or d.
    #[arg(long, value_name = "KIND")]
    regularizer: Option<RegularizerKind>,
    /// Turn the bias-reduction temperature controller on or off.
    #[arg(long, value_enum)]
    br: Option<Switch>,
    /// Output directory; created if missing, files in it are replaced.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            regularizer: self.regularizer,
            br: self.br.map(|s| matches!(s, Switch::On)),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct EvalReport<'a> {
    env: &'a str,
    seed: u64,
    adversary: String,
    evaluation: Evaluation,
}

fn write<R: Serialize>(
    dir: &Path,
    report: &R,
    metrics: &[io::MetricsRow],
    config: &ExperimentConfig,
    policy: Option<(&str, &PolicyHandle)>,
) -> Result<()> {
    io::write_outputs(dir, &RunOutputs { report, metrics, config, policy })
        .with_context(|| format!("writing outputs to {}", dir.display()))?;
    Ok(())
}

fn print_eval(e: &Evaluation, dir: &Path) {
    println!(
        "asr {} victim_success_rate {} victim_mean_reward {} ({} episodes) -> {}",
        io::sig9(e.asr),
        io::sig9(e.victim_success_rate),
        io::sig9(e.victim_mean_reward),
        e.episodes,
        dir.display()
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::VictimTrain(c) => {
            let cfg = c.load()?;
            let run = harness::train_victim(&cfg)?;
            write(&c.out, &run.report, &run.report.iterations, &cfg, Some((io::VICTIM_FILE, &run.policy)))?;
            if let Some(w) = &run.report.warning {
                eprintln!("warning: {w}");
            }
            print_eval(&run.report.evaluation, &c.out);
        }
        Command::Attack(c) => {
            let cfg = c.load()?;
            match harness::run_attack(&cfg) {
                Ok(run) => {
                    let policy = Some((io::ADVERSARY_FILE, &run.adversary));
                    write(&c.out, &run.report, &run.report.iterations, &cfg, policy)?;
                    if let Some(e) = &run.report.evaluation {
                        print_eval(e, &c.out);
                    }
                }
                Err(failure) => {
                    let policy = failure.adversary.as_ref().map(|p| (io::ADVERSARY_FILE, p));
                    write(&c.out, &failure.report, &failure.report.iterations, &cfg, policy)?;
                    return Err::<(), _>(failure.error).context("attack aborted; partial outputs written");
                }
            }
        }
        Command::Eval { common: c, adversary } => {
            let cfg = c.load()?;
            let policy = PolicyHandle::load(&adversary)?;
            let victim = cfg.load_victim()?;
            let evaluation = harness::evaluate(&cfg, victim, &policy, cfg.budget.eval_episodes, cfg.seed)?;
            let report = EvalReport {
                env: &cfg.env.name,
                seed: cfg.seed,
                adversary: adversary.display().to_string(),
                evaluation,
            };
            write(&c.out, &report, &[], &cfg, None)?;
            print_eval(&report.evaluation, &c.out);
        }
        Command::BaselineRandom(c) => {
            let cfg = c.load()?;
            let victim = cfg.load_victim()?;
            let evaluation = harness::random_attack_baseline(&cfg, victim, cfg.budget.eval_episodes, cfg.seed)?;
            let report = EvalReport { env: &cfg.env.name, seed: cfg.seed, adversary: "random".into(), evaluation };
            write(&c.out, &report, &[], &cfg, None)?;
            print_eval(&report.evaluation, &c.out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
