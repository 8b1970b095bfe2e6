use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use streampower::harness::{self, EvalPolicy, ExperimentConfig, Suite};
use streampower::Error;

#[derive(Parser)]
#[command(name = "streampower", version, about = "Energy-efficient predictive power allocation for mobile video streaming")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Dotted-path override, e.g. --set agent.batch=256 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> streampower::Result<ExperimentConfig> {
        ExperimentConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an agent and write a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Zero-noise evaluation of a checkpoint or a baseline.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Actor parameters CSV (required for the learned policy).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// learned, non_predictive or oracle.
        #[arg(long, default_value = "learned")]
        policy: String,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        /// Per-episode metrics CSV.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-frame rate/channel dump.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Oracle and non-predictive energies and oracle plans.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an oracle suite: powermath, env, gradients, prop2 or oracle.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate mobility traces.
    TraceGen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.cmd {
        Cmd::Train { cfg } => {
            let dir = harness::cmd_train(&cfg.load()?)?;
            println!("{}", dir.display());
        }
        Cmd::Eval { cfg, checkpoint, policy, episodes, out, dump } => {
            let policy: EvalPolicy = policy.parse()?;
            let evals = harness::cmd_eval(&cfg.load()?, policy, checkpoint.as_deref(), episodes, &out, dump.as_deref())?;
            let n = evals.len().max(1) as f64;
            let energy: f64 = evals.iter().map(|e| e.energy).sum::<f64>() / n;
            let stalls: usize = evals.iter().map(|e| e.stalls).sum();
            println!("episodes {} mean energy {energy:.4} J stalls {stalls}", evals.len());
        }
        Cmd::Baseline { cfg, episodes, out } => {
            harness::cmd_baseline(&cfg.load()?, episodes, &out)?;
            println!("{}", out.join("baselines.csv").display());
        }
        Cmd::Verify { suite, seed } => {
            let suite: Suite = suite.parse()?;
            let report = harness::cmd_verify(suite, seed)?;
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::TraceGen { cfg, count, out } => {
            for p in harness::cmd_trace_gen(&cfg.load()?, count, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
