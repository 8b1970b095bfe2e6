use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::tinynet::{Activation, InitScheme, Mlp};

use super::{features, rows_to_matrix, AgentConfig, Experience, UpdateStats, MBPS};

/// Critic sees the action as a_Mbps / 10.
pub const CRITIC_ACTION_SCALE: f64 = 0.1;

/// Plain DDPG: actor μ(s) and critic Q(s, a) with soft-updated targets.
#[derive(Debug, Clone)]
pub struct Ddpg {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
}

pub(crate) fn actor_net(state_dim: usize, hidden: usize, output_bias: f64, rng: &mut SimRng) -> Result<Mlp> {
    Mlp::init(
        &[state_dim, hidden, hidden, 1],
        &[Activation::Relu, Activation::Relu, Activation::ScaledTanh(40.0)],
        InitScheme { output_bias, ..InitScheme::ACTOR },
        rng,
    )
}

pub(crate) fn value_net(input_dim: usize, hidden: usize, rng: &mut SimRng) -> Result<Mlp> {
    Mlp::init(
        &[input_dim, hidden, hidden, 1],
        &[Activation::Relu, Activation::Relu, Activation::Linear],
        InitScheme::CRITIC,
        rng,
    )
}

impl Ddpg {
    pub fn new(state_dim: usize, hidden: usize, actor_bias: f64, rng: &mut SimRng) -> Result<Self> {
        let actor = actor_net(state_dim, hidden, actor_bias, rng)?;
        let critic = value_net(state_dim + 1, hidden, rng)?;
        Ok(Ddpg { actor_target: actor.clone(), critic_target: critic.clone(), actor, critic })
    }

    /// Critic input rows [features(s), a_Mbps·scale] for actions in Mbps.
    pub fn critic_input(states: &Array2<f64>, actions_mbps: &[f64]) -> Array2<f64> {
        let (n, d) = states.dim();
        let mut x = Array2::zeros((n, d + 1));
        x.slice_mut(ndarray::s![.., ..d]).assign(states);
        for (i, a) in actions_mbps.iter().enumerate() {
            x[[i, d]] = a * CRITIC_ACTION_SCALE;
        }
        x
    }

    pub fn q_value(&self, states: &Array2<f64>, actions_mbps: &[f64]) -> Result<Vec<f64>> {
        Ok(self.critic.predict(&Self::critic_input(states, actions_mbps))?.column(0).to_vec())
    }

    pub fn update(&mut self, batch: &[&Experience], cfg: &AgentConfig) -> Result<UpdateStats> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let d = self.actor.input_dim();
        let mut s_rows = Vec::with_capacity(n * d);
        let mut s2_rows = Vec::with_capacity(n * d);
        for e in batch {
            features(&e.env, &e.state, &mut s_rows);
            features(&e.env, &e.next_state, &mut s2_rows);
        }
        let s = rows_to_matrix(s_rows, n);
        let s2 = rows_to_matrix(s2_rows, n);

        // y = r + γ Q'(s', μ'(s')) unless terminal
        let a2 = self.actor_target.predict(&s2)?;
        let a2: Vec<f64> = a2.column(0).to_vec();
        let q2 = self.critic_target.predict(&Self::critic_input(&s2, &a2))?;
        let y: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(j, e)| e.reward + if e.done { 0.0 } else { cfg.gamma * q2[[j, 0]] })
            .collect();

        let actions: Vec<f64> = batch.iter().map(|e| e.action / MBPS).collect();
        let (q, cache) = self.critic.forward(&Self::critic_input(&s, &actions))?;
        let mut grad = Array2::zeros((n, 1));
        let mut loss = 0.0;
        for j in 0..n {
            let diff = q[[j, 0]] - y[j];
            loss += diff * diff / n as f64;
            grad[[j, 0]] = 2.0 * diff / n as f64;
        }
        let (cg, _) = self.critic.backward(&cache, &grad)?;
        self.critic.adam_step(&cg, cfg.lr_critic)?;

        // ascend Q(s, μ(s)) through the updated critic
        let (mu, a_cache) = self.actor.forward(&s)?;
        let mu_v: Vec<f64> = mu.column(0).to_vec();
        let (qm, q_cache) = self.critic.forward(&Self::critic_input(&s, &mu_v))?;
        let (_, dx) = self.critic.backward(&q_cache, &Array2::ones((n, 1)))?;
        let mut agrad = Array2::zeros((n, 1));
        for j in 0..n {
            agrad[[j, 0]] = -dx[[j, d]] * CRITIC_ACTION_SCALE / n as f64;
        }
        let (ag, _) = self.actor.backward(&a_cache, &agrad)?;
        self.actor.adam_step(&ag, cfg.lr_actor)?;

        self.actor_target.soft_update(&self.actor, cfg.omega)?;
        self.critic_target.soft_update(&self.critic, cfg.omega)?;
        Ok(UpdateStats { critic_loss: loss, actor_objective: qm.mean().unwrap_or(0.0) })
    }
}
