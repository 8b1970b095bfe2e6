//! Training loop (real episodes plus optional virtual episodes) and frozen
//! policy evaluation.

use std::sync::Arc;

use crate::env::{Penalty, RadioConfig, StreamingEnv, VideoConfig};
use crate::error::{Error, Result};
use crate::mobility::{generate_trace, ChannelTrace, ScenarioConfig};
use crate::rng::{substream, SimRng, Stream};

use super::{state_dim, AgentConfig, Algo, Dynamics, Experience, Learner, Policy, ReplayBuffer, TraceBuffer, MBPS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub algo: Algo,
    pub agent: AgentConfig,
    pub scenario: ScenarioConfig,
    pub video: VideoConfig,
    pub radio: RadioConfig,
    pub episodes: usize,
    pub seed: u64,
    /// Traces cover this multiple of the nominal session length so that
    /// stalled sessions can run on.
    pub trace_margin: f64,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.scenario.validate()?;
        self.video.validate()?;
        self.radio.validate()?;
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        if !(self.trace_margin >= 1.0) {
            return Err(Error::Config("trace_margin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn penalty(&self) -> Option<Penalty> {
        match self.algo {
            Algo::Ddpg => Some(Penalty { lambda: self.agent.penalty_lambda, cap: self.agent.penalty_cap }),
            Algo::PdsDdpg => None,
        }
    }

    pub fn trace_horizon(&self) -> usize {
        (self.video.horizon() as f64 * self.trace_margin).ceil() as usize
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.scenario.n_bs_tracked, self.scenario.history_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub real_frames: usize,
    pub virtual_frames: usize,
    pub energy: f64,
    pub violations: usize,
    pub mean_action_mbps: f64,
    pub noise_std: f64,
    /// Frames where the safety floor exceeded the rate bound.
    pub infeasible_floors: usize,
    pub completed: bool,
    /// Means over this episode's updates (0 when there were none).
    pub critic_loss: f64,
    pub actor_objective: f64,
}

fn make_env(spec: &TrainSpec, trace: Arc<ChannelTrace>, sizes_rng: &mut SimRng) -> Result<Arc<StreamingEnv>> {
    let video = spec.video.sample_spec(sizes_rng)?;
    Ok(Arc::new(StreamingEnv::new(trace, video, spec.radio, spec.agent.rate_bound(), spec.penalty())?))
}

struct Rngs {
    mobility: SimRng,
    fading: SimRng,
    sizes: SimRng,
    exploration: SimRng,
    replay: SimRng,
    traces: SimRng,
}

/// Incremental trainer: one call to [`Trainer::run_episode`] per real episode.
pub struct Trainer {
    pub spec: TrainSpec,
    pub learner: Learner,
    pub replay: ReplayBuffer<Experience>,
    pub trace_buffer: TraceBuffer,
    pub total_real_frames: usize,
    pub total_violations: usize,
    pub updates: usize,
    stats_sum: (f64, f64, usize),
    episode: usize,
    rngs: Rngs,
}

struct Rollout {
    frames: usize,
    energy: f64,
    violations: usize,
    action_sum: f64,
    infeasible: usize,
    completed: bool,
}

impl Trainer {
    pub fn new(spec: TrainSpec) -> Result<Self> {
        spec.validate()?;
        let mut init = substream(spec.seed, Stream::Init);
        let learner = Learner::new(spec.algo, spec.state_dim(), &spec.agent, &mut init)?;
        let rngs = Rngs {
            mobility: substream(spec.seed, Stream::Mobility),
            fading: substream(spec.seed, Stream::Fading),
            sizes: substream(spec.seed, Stream::SegmentSizes),
            exploration: substream(spec.seed, Stream::Exploration),
            replay: substream(spec.seed, Stream::ReplaySampling),
            traces: substream(spec.seed, Stream::TraceSampling),
        };
        Ok(Trainer {
            replay: ReplayBuffer::new(spec.agent.replay_capacity),
            trace_buffer: TraceBuffer::new(),
            learner,
            spec,
            total_real_frames: 0,
            total_violations: 0,
            updates: 0,
            stats_sum: (0.0, 0.0, 0),
            episode: 0,
            rngs,
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn policy(&self) -> Policy {
        self.learner.policy()
    }

    fn maybe_update(&mut self) -> Result<()> {
        let batch_n = self.spec.agent.batch;
        if self.replay.len() < batch_n {
            return Ok(());
        }
        let idx = self.replay.sample_indices(&mut self.rngs.replay, batch_n);
        let batch: Vec<&Experience> = idx.iter().map(|&i| self.replay.get(i)).collect();
        let stats = self.learner.update(&batch, &self.spec.agent)?;
        self.updates += 1;
        self.stats_sum.0 += stats.critic_loss;
        self.stats_sum.1 += stats.actor_objective;
        self.stats_sum.2 += 1;
        if !stats.critic_loss.is_finite() || !stats.actor_objective.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite update at episode {} (critic loss {}, actor objective {})",
                self.episode, stats.critic_loss, stats.actor_objective
            )));
        }
        Ok(())
    }

    fn rollout(&mut self, env: Arc<StreamingEnv>, noise_std: f64, is_virtual: bool) -> Result<Rollout> {
        let fading = !is_virtual && self.spec.agent.dynamics == Dynamics::Fading;
        let mut s = env.reset();
        let mut r = Rollout { frames: 0, energy: 0.0, violations: 0, action_sum: 0.0, infeasible: 0, completed: false };
        loop {
            let act = self.learner.act(&env, &s, noise_std, &mut self.rngs.exploration)?;
            let out = if fading {
                env.step_fading(&s, act.action, &mut self.rngs.fading)?
            } else {
                env.step_idealized(&s, act.action)?
            };
            r.frames += 1;
            r.energy += out.energy;
            r.violations += out.stalled as usize;
            r.action_sum += act.action;
            r.infeasible += act.infeasible as usize;
            let next = out.next_state.clone();
            self.replay.push(Experience {
                env: env.clone(),
                state: s,
                action: act.action,
                reward: out.reward,
                next_state: out.next_state,
                done: out.done,
                is_virtual,
            });
            self.maybe_update()?;
            s = next;
            if out.done {
                r.completed = true;
                break;
            }
            if out.truncated {
                break;
            }
        }
        Ok(r)
    }

    /// Runs one real episode, then (PDS-DDPG) K virtual episodes on stored traces.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let noise_std = self.spec.agent.noise_std(self.episode, self.spec.episodes);
        let trace = Arc::new(generate_trace(
            &self.spec.scenario,
            self.spec.trace_horizon(),
            self.spec.video.dt,
            &mut self.rngs.mobility,
        ));
        let env = make_env(&self.spec, trace.clone(), &mut self.rngs.sizes)?;
        let real = self.rollout(env, noise_std, false)?;
        self.total_real_frames += real.frames;
        self.total_violations += real.violations;

        let mut virtual_frames = 0;
        if self.spec.algo == Algo::PdsDdpg && self.spec.agent.virtual_k > 0 {
            self.trace_buffer.push_completed(trace, real.completed);
            for _ in 0..self.spec.agent.virtual_k {
                let Some(tr) = self.trace_buffer.sample(&mut self.rngs.traces) else { break };
                let venv = make_env(&self.spec, tr, &mut self.rngs.traces)?;
                virtual_frames += self.rollout(venv, noise_std, true)?.frames;
            }
        }
        if !self.learner.is_finite() {
            return Err(Error::Numerical(format!("network parameters became non-finite in episode {}", self.episode)));
        }
        let (cl, ao, nu) = std::mem::take(&mut self.stats_sum);
        let per = |v: f64| if nu == 0 { 0.0 } else { v / nu as f64 };
        let log = EpisodeLog {
            critic_loss: per(cl),
            actor_objective: per(ao),
            episode: self.episode,
            real_frames: real.frames,
            virtual_frames,
            energy: real.energy,
            violations: real.violations,
            mean_action_mbps: real.action_sum / real.frames.max(1) as f64 / MBPS,
            noise_std,
            infeasible_floors: real.infeasible,
            completed: real.completed,
        };
        self.episode += 1;
        Ok(log)
    }
}

/// Runs the configured number of episodes. `hook` sees every episode and may
/// stop training early by returning false.
pub fn train_with<F>(spec: TrainSpec, mut hook: F) -> Result<(Trainer, Vec<EpisodeLog>)>
where
    F: FnMut(&Trainer, &EpisodeLog) -> bool,
{
    let mut trainer = Trainer::new(spec)?;
    let mut logs = Vec::with_capacity(trainer.spec.episodes);
    while trainer.episodes_done() < trainer.spec.episodes {
        let log = trainer.run_episode()?;
        let keep_going = hook(&trainer, &log);
        logs.push(log);
        if !keep_going {
            break;
        }
    }
    Ok((trainer, logs))
}

pub fn train(spec: TrainSpec) -> Result<(Trainer, Vec<EpisodeLog>)> {
    train_with(spec, |_, _| true)
}

/// Fixed evaluation sessions drawn from the evaluation substream.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub envs: Vec<Arc<StreamingEnv>>,
}

impl TestSet {
    pub fn generate(
        scenario: &ScenarioConfig,
        video: &VideoConfig,
        radio: &RadioConfig,
        rate_bound: f64,
        penalty: Option<Penalty>,
        n: usize,
        seed: u64,
        trace_margin: f64,
    ) -> Result<Self> {
        let mut rng = substream(seed, Stream::Evaluation);
        let horizon = (video.horizon() as f64 * trace_margin).ceil() as usize;
        let envs = (0..n)
            .map(|_| {
                let trace = Arc::new(generate_trace(scenario, horizon, video.dt, &mut rng));
                let spec = video.sample_spec(&mut rng)?;
                Ok(Arc::new(StreamingEnv::new(trace, spec, *radio, rate_bound, penalty)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TestSet { envs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeEval {
    pub energy: f64,
    pub stalls: usize,
    pub frames: usize,
    pub completed: bool,
    pub rates: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// Noise-free rollout of `choose` on one session.
pub fn rollout_policy<F>(env: &StreamingEnv, fading: Option<&mut SimRng>, mut choose: F) -> Result<EpisodeEval>
where
    F: FnMut(&StreamingEnv, &crate::env::SessionState) -> Result<f64>,
{
    let mut s = env.reset();
    let mut ev = EpisodeEval { energy: 0.0, stalls: 0, frames: 0, completed: false, rates: vec![], alphas: vec![] };
    let mut fading = fading;
    loop {
        let a = choose(env, &s)?;
        let out = match fading.as_deref_mut() {
            Some(rng) => env.step_fading(&s, a, rng)?,
            None => env.step_idealized(&s, a)?,
        };
        ev.energy += out.energy;
        ev.stalls += out.stalled as usize;
        ev.frames += 1;
        ev.rates.push(a);
        ev.alphas.push(s.alpha());
        s = out.next_state;
        if out.done {
            ev.completed = true;
            break;
        }
        if out.truncated {
            break;
        }
    }
    Ok(ev)
}

pub fn evaluate(policy: &Policy, tests: &TestSet) -> Result<Vec<EpisodeEval>> {
    tests.envs.iter().map(|env| rollout_policy(env, None, |e, s| policy.action(e, s))).collect()
}
