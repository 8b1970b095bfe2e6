//! Experiment plumbing behind the command line: config loading, run
//! directories, CSV artifacts and the verification suites.

pub mod config;
pub mod verify;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::agents::train::{rollout_policy, train_with, EpisodeEval, EpisodeLog, TestSet};
use crate::agents::{Algo, Dynamics, Policy};
use crate::baselines::{non_predictive_rate, solve_offline_optimal};
use crate::env::{SessionState, StreamingEnv};
use crate::error::{Error, Result};
use crate::mobility::generate_trace;
use crate::rng::{substream, Stream};
use crate::tinynet::Mlp;

pub use config::ExperimentConfig;
pub use verify::{run_suite, Report, Suite};

pub const TRAIN_LOG_VERSION: &str = "# streampower train-log v1";
pub const EVAL_CSV_VERSION: &str = "# streampower eval v1";
pub const DUMP_CSV_VERSION: &str = "# streampower policy-dump v1";
pub const BASELINE_CSV_VERSION: &str = "# streampower baselines v1";

/// Offset that keeps evaluation sessions disjoint from the training seed's draws.
const EVAL_SEED_OFFSET: u64 = 0x5eed_0000;

fn algo_tag(algo: Algo) -> &'static str {
    match algo {
        Algo::Ddpg => "ddpg",
        Algo::PdsDdpg => "pds_ddpg",
    }
}

pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join(format!("{}-seed{}", algo_tag(cfg.algo), cfg.seed))
}

fn write_params(net: &Mlp, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    net.save_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Mlp> {
    let f = File::open(path).map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))?;
    Mlp::load_csv(BufReader::new(f))
}

/// Per-episode metrics; the cumulative violation frequency is violating
/// frames over all real frames so far.
pub struct TrainLogWriter<W: Write> {
    out: csv::Writer<W>,
    frames: usize,
    violations: usize,
}

impl<W: Write> TrainLogWriter<W> {
    pub fn new(mut w: W) -> Result<Self> {
        writeln!(w, "{TRAIN_LOG_VERSION}")?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "episode",
            "real_frames",
            "virtual_frames",
            "energy_j",
            "violations",
            "cum_violation_freq",
            "noise_std_mbps",
            "mean_rate_mbps",
            "infeasible_floors",
            "completed",
        ])?;
        Ok(TrainLogWriter { out, frames: 0, violations: 0 })
    }

    pub fn push(&mut self, log: &EpisodeLog) -> Result<()> {
        self.frames += log.real_frames;
        self.violations += log.violations;
        let freq = if self.frames == 0 { 0.0 } else { self.violations as f64 / self.frames as f64 };
        self.out.write_record(&[
            (log.episode + 1).to_string(),
            log.real_frames.to_string(),
            log.virtual_frames.to_string(),
            format!("{:e}", log.energy),
            log.violations.to_string(),
            format!("{freq:e}"),
            format!("{:e}", log.noise_std),
            format!("{:e}", log.mean_action_mbps),
            log.infeasible_floors.to_string(),
            (log.completed as u8).to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Trains and writes config snapshot, training log, periodic checkpoints and
/// final parameters into the run directory. Wall clock goes to a separate
/// file so the training log is reproducible byte for byte.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = run_dir(cfg);
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let mut log = TrainLogWriter::new(BufWriter::new(File::create(dir.join("train_log.csv"))?))?;
    let mut timing = csv::Writer::from_path(dir.join("timing.csv"))?;
    timing.write_record(["episode", "wall_clock_s"])?;
    let start = Instant::now();
    let mut io_err = None;
    let every = cfg.checkpoint_every;
    let (trainer, _) = train_with(cfg.train_spec(), |tr, ep| {
        let res = (|| -> Result<()> {
            log.push(ep)?;
            timing.write_record(&[(ep.episode + 1).to_string(), format!("{:.3}", start.elapsed().as_secs_f64())])?;
            if every > 0 && (ep.episode + 1) % every == 0 {
                let tag = format!("ep{:06}", ep.episode + 1);
                write_params(tr.learner.actor(), &dir.join("checkpoints").join(format!("actor_{tag}.csv")))?;
                write_params(tr.learner.critic(), &dir.join("checkpoints").join(format!("critic_{tag}.csv")))?;
            }
            Ok(())
        })();
        match res {
            Ok(()) => true,
            Err(e) => {
                io_err = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    log.finish()?;
    timing.flush()?;
    write_params(trainer.learner.actor(), &dir.join("actor.csv"))?;
    write_params(trainer.learner.critic(), &dir.join("critic.csv"))?;
    Ok(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    Learned,
    NonPredictive,
    Oracle,
}

impl std::str::FromStr for EvalPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(EvalPolicy::Learned),
            "non_predictive" | "non-predictive" => Ok(EvalPolicy::NonPredictive),
            "oracle" | "optimal" => Ok(EvalPolicy::Oracle),
            _ => Err(Error::Config(format!("unknown policy {s:?} (expected learned, non_predictive or oracle)"))),
        }
    }
}

pub fn eval_test_set(cfg: &ExperimentConfig, n_episodes: usize) -> Result<TestSet> {
    let penalty = cfg.train_spec().penalty();
    TestSet::generate(
        &cfg.scenario,
        &cfg.video,
        &cfg.radio,
        cfg.agent.rate_bound(),
        penalty,
        n_episodes,
        cfg.seed.wrapping_add(EVAL_SEED_OFFSET),
        cfg.trace_margin,
    )
}

/// Zero-noise rollouts of one policy over `n_episodes` fresh sessions.
pub fn evaluate_policy(
    cfg: &ExperimentConfig,
    policy: EvalPolicy,
    checkpoint: Option<&Path>,
    n_episodes: usize,
) -> Result<Vec<EpisodeEval>> {
    let tests = eval_test_set(cfg, n_episodes)?;
    let learned = match (policy, checkpoint) {
        (EvalPolicy::Learned, Some(p)) => Some(Policy { actor: load_params(p)?, safe: cfg.algo == Algo::PdsDdpg }),
        (EvalPolicy::Learned, None) => return Err(Error::Config("learned policy needs a checkpoint".into())),
        _ => None,
    };
    let mut fading = substream(cfg.seed.wrapping_add(EVAL_SEED_OFFSET), Stream::Fading);
    let use_fading = cfg.agent.dynamics == Dynamics::Fading;
    tests
        .envs
        .iter()
        .map(|env| {
            let rng = if use_fading { Some(&mut fading) } else { None };
            match policy {
                EvalPolicy::Learned => {
                    let pol = learned.as_ref().expect("loaded above");
                    rollout_policy(env, rng, |e, s| pol.action(e, s))
                }
                EvalPolicy::NonPredictive => rollout_policy(env, rng, |e, s| Ok(non_predictive_rate(s, &e.video))),
                EvalPolicy::Oracle => {
                    let plan = solve_offline_optimal(&env.trace, &env.video, &env.radio, env.rate_bound)?.plan.rates;
                    rollout_policy(env, rng, |_, s: &SessionState| Ok(plan.get(s.frame as usize - 1).copied().unwrap_or(0.0)))
                }
            }
        })
        .collect()
}

pub fn write_eval_csv<W: Write>(mut w: W, evals: &[EpisodeEval]) -> Result<()> {
    writeln!(w, "{EVAL_CSV_VERSION}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode", "energy_j", "stalls", "frames", "completed"])?;
    for (k, e) in evals.iter().enumerate() {
        out.write_record(&[
            (k + 1).to_string(),
            format!("{:e}", e.energy),
            e.stalls.to_string(),
            e.frames.to_string(),
            (e.completed as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_policy_dump<W: Write>(mut w: W, evals: &[EpisodeEval]) -> Result<()> {
    writeln!(w, "{DUMP_CSV_VERSION}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode", "frame", "alpha1", "rate_mbps"])?;
    for (k, e) in evals.iter().enumerate() {
        for (t, (a, r)) in e.alphas.iter().zip(&e.rates).enumerate() {
            out.write_record(&[(k + 1).to_string(), (t + 1).to_string(), format!("{a:e}"), format!("{:e}", r / 1e6)])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    policy: EvalPolicy,
    checkpoint: Option<&Path>,
    n_episodes: usize,
    out: &Path,
    dump: Option<&Path>,
) -> Result<Vec<EpisodeEval>> {
    let evals = evaluate_policy(cfg, policy, checkpoint, n_episodes)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    write_eval_csv(BufWriter::new(File::create(out)?), &evals)?;
    if let Some(d) = dump {
        write_policy_dump(BufWriter::new(File::create(d)?), &evals)?;
    }
    Ok(evals)
}

/// Oracle and non-predictive energies on the evaluation sessions, plus the
/// oracle rate plan of each session.
pub fn cmd_baseline(cfg: &ExperimentConfig, n_episodes: usize, out_dir: &Path) -> Result<()> {
    let tests = eval_test_set(cfg, n_episodes)?;
    fs::create_dir_all(out_dir.join("plans"))?;
    let mut w = BufWriter::new(File::create(out_dir.join("baselines.csv"))?);
    writeln!(w, "{BASELINE_CSV_VERSION}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode", "oracle_energy_j", "non_predictive_energy_j", "oracle_iterations", "dp_fallback"])?;
    for (k, env) in tests.envs.iter().enumerate() {
        let rep = solve_offline_optimal(&env.trace, &env.video, &env.radio, env.rate_bound)?;
        let np = crate::baselines::run_non_predictive(env)?.1;
        out.write_record(&[
            (k + 1).to_string(),
            format!("{:e}", rep.energy),
            format!("{np:e}"),
            rep.iterations.to_string(),
            (rep.used_dp_fallback as u8).to_string(),
        ])?;
        let mut pw = BufWriter::new(File::create(out_dir.join("plans").join(format!("oracle_{:05}.csv", k + 1)))?);
        rep.plan.write_csv(&mut pw)?;
        pw.flush()?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_verify(suite: Suite, seed: u64) -> Result<Report> {
    run_suite(suite, seed)
}

/// Writes `count` mobility traces covering the configured session length.
pub fn cmd_trace_gen(cfg: &ExperimentConfig, count: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut rng = substream(cfg.seed, Stream::Mobility);
    let horizon = (cfg.video.horizon() as f64 * cfg.trace_margin).ceil() as usize;
    (0..count)
        .map(|k| {
            let tr = generate_trace(&cfg.scenario, horizon, cfg.video.dt, &mut rng);
            let path = out_dir.join(format!("trace_{:05}.csv", k + 1));
            let mut w = BufWriter::new(File::create(&path)?);
            tr.write_csv(&mut w)?;
            w.flush()?;
            Ok(path)
        })
        .collect()
}

/// Convenience for tests and analysis: one session built from a config.
pub fn single_env(cfg: &ExperimentConfig) -> Result<Arc<StreamingEnv>> {
    Ok(eval_test_set(cfg, 1)?.envs.remove(0))
}
