//! DDPG and PDS-DDPG learners for the streaming MDP.
//!
//! Actions are average rates. Networks see them in Mbps; the environment
//! takes bit/s.

mod ddpg;
mod pds;
pub mod replay;
pub mod train;

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{PdsState, SessionState, StreamingEnv};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::tinynet::{InitScheme, Mlp};

pub use ddpg::{Ddpg, CRITIC_ACTION_SCALE};
pub use pds::{critic_q_pds, critic_q_pds_grad_mbps, PdsDdpg};
pub use replay::{ReplayBuffer, TraceBuffer};

pub const MBPS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ddpg,
    PdsDdpg,
}

impl std::str::FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpg" => Ok(Algo::Ddpg),
            "pds_ddpg" | "pds-ddpg" => Ok(Algo::PdsDdpg),
            _ => Err(Error::Config(format!("unknown algo {s:?} (expected ddpg or pds_ddpg)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Per-slot Rayleigh simulation of every real frame.
    Fading,
    /// Expected bits and energy per frame.
    Idealized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub omega: f64,
    pub batch: usize,
    pub gamma: f64,
    /// Exploration std (Mbps) at the first and last real episode.
    pub noise_start: f64,
    pub noise_end: f64,
    /// Virtual episodes per real episode (PDS-DDPG only).
    pub virtual_k: usize,
    pub penalty_lambda: f64,
    pub penalty_cap: f64,
    pub rate_bound_mbps: f64,
    pub replay_capacity: usize,
    pub hidden_ddpg: usize,
    pub hidden_pds: usize,
    /// Initial bias of the actor output unit (-15 leaves tanh saturated).
    pub actor_output_bias: f64,
    /// Dynamics of real episodes; virtual episodes are always idealized.
    pub dynamics: Dynamics,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            omega: 1e-3,
            batch: 1024,
            gamma: 1.0,
            noise_start: 10.0,
            noise_end: 0.0,
            virtual_k: 4,
            penalty_lambda: 30.0,
            penalty_cap: 50.0,
            rate_bound_mbps: 80.0,
            replay_capacity: 1_000_000,
            hidden_ddpg: 200,
            hidden_pds: 100,
            actor_output_bias: InitScheme::ACTOR_UNSATURATED.output_bias,
            dynamics: Dynamics::Fading,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.lr_actor, self.lr_critic, self.omega, self.rate_bound_mbps, self.penalty_lambda, self.penalty_cap];
        if pos.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("agent: learning rates, omega, rate bound and penalty must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("agent: gamma must lie in (0, 1]".into()));
        }
        if self.batch == 0 || self.replay_capacity < self.batch || self.hidden_ddpg == 0 || self.hidden_pds == 0 {
            return Err(Error::Config("agent: batch, widths positive and replay_capacity >= batch".into()));
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) {
            return Err(Error::Config("agent: noise std must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn rate_bound(&self) -> f64 {
        self.rate_bound_mbps * MBPS
    }

    /// Linear schedule: `noise_start` at episode 0, `noise_end` at the last.
    pub fn noise_std(&self, episode: usize, episodes: usize) -> f64 {
        if episodes <= 1 {
            return self.noise_start;
        }
        let f = episode as f64 / (episodes - 1) as f64;
        self.noise_start + (self.noise_end - self.noise_start) * f.min(1.0)
    }
}

/// One transition. The environment handle carries the segment sizes and
/// trace the post-decision map needs.
#[derive(Debug, Clone)]
pub struct Experience {
    pub env: Arc<StreamingEnv>,
    pub state: SessionState,
    /// Executed rate (bit/s), after noise, safety layer and clamping.
    pub action: f64,
    pub reward: f64,
    pub next_state: SessionState,
    pub done: bool,
    pub is_virtual: bool,
}

/// Number of network inputs for a state with N_b tracked cells and N_t history.
pub fn state_dim(n_bs: usize, history_len: usize) -> usize {
    4 + n_bs * (history_len + 1)
}

fn push_scalars(out: &mut Vec<f64>, buffer: f64, seg: f64, l: usize, eta: f64, lv: usize) {
    out.push(buffer / 1e7);
    out.push(seg / 1e7);
    out.push(l as f64 / lv as f64);
    out.push(eta);
}

fn push_channels(out: &mut Vec<f64>, alpha_history: &[f64], sigma2: f64) {
    out.extend(alpha_history.iter().map(|a| (a / sigma2).log10() / 10.0));
}

/// [B/1e7, S/1e7, l/L_v, η, log10(α/σ²)/10 …].
pub fn features(env: &StreamingEnv, s: &SessionState, out: &mut Vec<f64>) {
    push_scalars(out, s.buffer, s.seg_size_playing, s.playback_pos, s.download_ratio, env.video.frames_per_segment);
    push_channels(out, &s.alpha_history, env.sigma2());
}

/// Same layout as [`features`] for a post-decision state.
pub fn pds_features(env: &StreamingEnv, p: &PdsState, out: &mut Vec<f64>) {
    push_scalars(out, p.buffer, p.seg_size_next, p.playback_pos, p.download_ratio, env.video.frames_per_segment);
    push_channels(out, &p.alpha_history, env.sigma2());
}

/// ∂(PDS features)/∂a with a in Mbps, for the four scalar slots.
pub fn pds_feature_grad_mbps(env: &StreamingEnv) -> [f64; 4] {
    let g = env.f_pds_grad_action();
    [g[0] * MBPS / 1e7, g[1] * MBPS / 1e7, 0.0, g[3] * MBPS]
}

pub(crate) fn rows_to_matrix(rows: Vec<f64>, n: usize) -> Array2<f64> {
    let d = rows.len() / n.max(1);
    Array2::from_shape_vec((n, d), rows).expect("rows have equal length")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutcome {
    /// Rate to execute (bit/s).
    pub action: f64,
    /// Raw actor output μ(s) in Mbps, before noise.
    pub mu: f64,
    /// The safety floor set the action.
    pub floor_active: bool,
    /// The floor exceeded the rate bound, so the action was capped.
    pub infeasible: bool,
}

fn noise(noise_std: f64, rng: &mut SimRng) -> f64 {
    if noise_std > 0.0 {
        Normal::new(0.0, noise_std).expect("std positive").sample(rng)
    } else {
        0.0
    }
}

fn actor_output(env: &StreamingEnv, s: &SessionState, actor: &Mlp) -> Result<f64> {
    let mut x = Vec::with_capacity(actor.input_dim());
    features(env, s, &mut x);
    Ok(actor.predict_one(&x)?[0])
}

/// a = clamp(μ(s) + N(0, σ²), 0, bound).
pub fn act_ddpg(env: &StreamingEnv, s: &SessionState, actor: &Mlp, noise_std: f64, rng: &mut SimRng) -> Result<ActOutcome> {
    let mu = actor_output(env, s, actor)?;
    let bound = env.rate_bound / MBPS;
    let a = (mu + noise(noise_std, rng)).clamp(0.0, bound);
    Ok(ActOutcome { action: a * MBPS, mu, floor_active: false, infeasible: false })
}

/// Safety layer max(clamp(a, 0, bound), floor) on a proposal in Mbps. The
/// floor wins over the bound; `infeasible` records when it had to.
pub fn safety_layer(env: &StreamingEnv, s: &SessionState, proposal_mbps: f64) -> ActOutcome {
    let floor = env.min_safe_rate(s);
    let raw = proposal_mbps.clamp(0.0, env.rate_bound / MBPS) * MBPS;
    ActOutcome { action: raw.max(floor), mu: proposal_mbps, floor_active: raw < floor, infeasible: floor > env.rate_bound }
}

/// a = max(μ(s) + N(0, σ²), min_safe_rate(s)).
pub fn act_safe(env: &StreamingEnv, s: &SessionState, actor: &Mlp, noise_std: f64, rng: &mut SimRng) -> Result<ActOutcome> {
    let mu = actor_output(env, s, actor)?;
    let mut out = safety_layer(env, s, mu + noise(noise_std, rng));
    out.mu = mu;
    Ok(out)
}

/// Frozen deterministic policy for evaluation.
#[derive(Debug, Clone)]
pub struct Policy {
    pub actor: Mlp,
    pub safe: bool,
}

impl Policy {
    pub fn action(&self, env: &StreamingEnv, s: &SessionState) -> Result<f64> {
        let mu = actor_output(env, s, &self.actor)?;
        Ok(if self.safe {
            safety_layer(env, s, mu).action
        } else {
            (mu.clamp(0.0, env.rate_bound / MBPS)) * MBPS
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

/// Either learner behind one interface for the training loop.
#[derive(Debug, Clone)]
pub enum Learner {
    Ddpg(Ddpg),
    Pds(PdsDdpg),
}

impl Learner {
    pub fn new(algo: Algo, state_dim: usize, cfg: &AgentConfig, rng: &mut SimRng) -> Result<Self> {
        Ok(match algo {
            Algo::Ddpg => Learner::Ddpg(Ddpg::new(state_dim, cfg.hidden_ddpg, cfg.actor_output_bias, rng)?),
            Algo::PdsDdpg => Learner::Pds(PdsDdpg::new(state_dim, cfg.hidden_pds, cfg.actor_output_bias, rng)?),
        })
    }

    pub fn act(&self, env: &StreamingEnv, s: &SessionState, noise_std: f64, rng: &mut SimRng) -> Result<ActOutcome> {
        match self {
            Learner::Ddpg(d) => act_ddpg(env, s, &d.actor, noise_std, rng),
            Learner::Pds(p) => act_safe(env, s, &p.actor, noise_std, rng),
        }
    }

    pub fn update(&mut self, batch: &[&Experience], cfg: &AgentConfig) -> Result<UpdateStats> {
        match self {
            Learner::Ddpg(d) => d.update(batch, cfg),
            Learner::Pds(p) => p.update(batch, cfg),
        }
    }

    pub fn policy(&self) -> Policy {
        match self {
            Learner::Ddpg(d) => Policy { actor: d.actor.params_only(), safe: false },
            Learner::Pds(p) => Policy { actor: p.actor.params_only(), safe: true },
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Learner::Ddpg(d) => d.actor.is_finite() && d.critic.is_finite(),
            Learner::Pds(p) => p.actor.is_finite() && p.v.is_finite(),
        }
    }

    pub fn actor(&self) -> &Mlp {
        match self {
            Learner::Ddpg(d) => &d.actor,
            Learner::Pds(p) => &p.actor,
        }
    }

    pub fn critic(&self) -> &Mlp {
        match self {
            Learner::Ddpg(d) => &d.critic,
            Learner::Pds(p) => &p.v,
        }
    }
}

/// Uniform integer in [0, n), exposed for replay tests.
pub(crate) fn uniform_index(rng: &mut SimRng, n: usize) -> usize {
    rng.random_range(0..n)
}
