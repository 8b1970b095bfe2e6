use ndarray::Array2;

use crate::env::{SessionState, StreamingEnv};
use crate::error::{Error, Result};
use crate::power_math::{expected_power, marginal_power};
use crate::rng::SimRng;
use crate::tinynet::{Grads, Mlp};

use super::ddpg::{actor_net, value_net};
use super::{features, pds_feature_grad_mbps, pds_features, rows_to_matrix, safety_layer, AgentConfig, Experience, UpdateStats, MBPS};

/// PDS-DDPG: the critic is Q(s, a) = −ΔT·p̄(α, a) + V(f_pds(s, a)), with only
/// V learned. The actor acts through the safety layer.
#[derive(Debug, Clone)]
pub struct PdsDdpg {
    pub actor: Mlp,
    pub v: Mlp,
    pub actor_target: Mlp,
    pub v_target: Mlp,
}

/// Q of the post-decision critic for one state and a rate in bit/s.
pub fn critic_q_pds(env: &StreamingEnv, s: &SessionState, action: f64, v: &Mlp) -> Result<f64> {
    let cost = env.video.dt * expected_power(action, &env.link(s.alpha()))?;
    let mut x = Vec::with_capacity(v.input_dim());
    pds_features(env, &env.f_pds(s, action), &mut x);
    Ok(-cost + v.predict_one(&x)?[0])
}

/// ∂Q/∂a (per Mbps) of the post-decision critic at a rate in bit/s.
pub fn critic_q_pds_grad_mbps(env: &StreamingEnv, s: &SessionState, action: f64, v: &Mlp) -> Result<f64> {
    let mut x = Vec::with_capacity(v.input_dim());
    pds_features(env, &env.f_pds(s, action), &mut x);
    let xm = rows_to_matrix(x, 1);
    let (_, cache) = v.forward(&xm)?;
    let (_, dx) = v.backward(&cache, &Array2::ones((1, 1)))?;
    Ok(grad_from_dx(env, s, action, dx.row(0).as_slice().expect("contiguous")))
}

fn grad_from_dx(env: &StreamingEnv, s: &SessionState, action: f64, dx: &[f64]) -> f64 {
    let fg = pds_feature_grad_mbps(env);
    let dv: f64 = (0..4).map(|k| dx[k] * fg[k]).sum();
    -env.video.dt * MBPS * marginal_power(action, &env.link(s.alpha())) + dv
}

impl PdsDdpg {
    pub fn new(state_dim: usize, hidden: usize, actor_bias: f64, rng: &mut SimRng) -> Result<Self> {
        let actor = actor_net(state_dim, hidden, actor_bias, rng)?;
        let v = value_net(state_dim, hidden, rng)?;
        Ok(PdsDdpg { actor_target: actor.clone(), v_target: v.clone(), actor, v })
    }

    fn state_matrix(batch: &[&Experience], next: bool) -> Array2<f64> {
        let mut rows = Vec::new();
        for e in batch {
            features(&e.env, if next { &e.next_state } else { &e.state }, &mut rows);
        }
        rows_to_matrix(rows, batch.len())
    }

    /// V regression targets: 0 on terminal transitions, otherwise
    /// γ·Q′(s′, μ′_s(s′, 0)) built from target networks.
    pub fn value_targets(&self, batch: &[&Experience], cfg: &AgentConfig) -> Result<Vec<f64>> {
        let n = batch.len();
        let s2 = Self::state_matrix(batch, true);
        let mu2 = self.actor_target.predict(&s2)?;
        let mut rows = Vec::with_capacity(s2.len());
        let mut cost = vec![0.0; n];
        for (j, e) in batch.iter().enumerate() {
            let a = if e.done { 0.0 } else { safety_layer(&e.env, &e.next_state, mu2[[j, 0]]).action };
            if !e.done {
                cost[j] = e.env.video.dt * expected_power(a, &e.env.link(e.next_state.alpha()))?;
            }
            pds_features(&e.env, &e.env.f_pds(&e.next_state, a), &mut rows);
        }
        let v2 = self.v_target.predict(&rows_to_matrix(rows, n))?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(j, e)| if e.done { 0.0 } else { cfg.gamma * (-cost[j] + v2[[j, 0]]) })
            .collect())
    }

    /// Gradient of −mean_j Q(s_j, μ_s(s_j, 0)) w.r.t. actor parameters, and
    /// the mean Q. Samples where the safety floor binds contribute nothing.
    pub fn actor_gradient(&self, batch: &[&Experience]) -> Result<(Grads, f64)> {
        let n = batch.len();
        let s = Self::state_matrix(batch, false);
        let (mu, a_cache) = self.actor.forward(&s)?;
        let mut rows = Vec::with_capacity(s.len());
        let mut acts = Vec::with_capacity(n);
        let mut cost = 0.0;
        for (j, e) in batch.iter().enumerate() {
            let out = safety_layer(&e.env, &e.state, mu[[j, 0]]);
            cost += e.env.video.dt * expected_power(out.action, &e.env.link(e.state.alpha()))?;
            pds_features(&e.env, &e.env.f_pds(&e.state, out.action), &mut rows);
            acts.push(out);
        }
        let x = rows_to_matrix(rows, n);
        let (vq, v_cache) = self.v.forward(&x)?;
        let (_, dx) = self.v.backward(&v_cache, &Array2::ones((n, 1)))?;
        let mut agrad = Array2::zeros((n, 1));
        for (j, e) in batch.iter().enumerate() {
            let out = &acts[j];
            // rate capped at the bound or raised to the floor: no path back to μ
            if out.floor_active || out.mu <= 0.0 || out.mu * MBPS >= e.env.rate_bound {
                continue;
            }
            let dq = grad_from_dx(&e.env, &e.state, out.action, dx.row(j).as_slice().expect("contiguous"));
            agrad[[j, 0]] = -dq / n as f64;
        }
        let (g, _) = self.actor.backward(&a_cache, &agrad)?;
        let q_mean = (vq.sum() - cost) / n as f64;
        Ok((g, q_mean))
    }

    pub fn update(&mut self, batch: &[&Experience], cfg: &AgentConfig) -> Result<UpdateStats> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let y = self.value_targets(batch, cfg)?;
        let mut rows = Vec::new();
        for e in batch {
            pds_features(&e.env, &e.env.f_pds(&e.state, e.action), &mut rows);
        }
        let (v, cache) = self.v.forward(&rows_to_matrix(rows, n))?;
        let mut grad = Array2::zeros((n, 1));
        let mut loss = 0.0;
        for j in 0..n {
            let diff = v[[j, 0]] - y[j];
            loss += diff * diff / n as f64;
            grad[[j, 0]] = 2.0 * diff / n as f64;
        }
        let (vg, _) = self.v.backward(&cache, &grad)?;
        self.v.adam_step(&vg, cfg.lr_critic)?;

        let (ag, q_mean) = self.actor_gradient(batch)?;
        self.actor.adam_step(&ag, cfg.lr_actor)?;

        self.actor_target.soft_update(&self.actor, cfg.omega)?;
        self.v_target.soft_update(&self.v, cfg.omega)?;
        Ok(UpdateStats { critic_loss: loss, actor_objective: q_mean })
    }
}
