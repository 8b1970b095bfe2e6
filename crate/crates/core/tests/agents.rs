use std::sync::Arc;

use ndarray::{Array1, Array2};
use streampower::agents::train::*;
use streampower::agents::*;
use streampower::env::*;
use streampower::mobility::{generate_trace, ScenarioConfig};
use streampower::rng::{substream, SimRng, Stream};
use streampower::tinynet::{Activation, Dense, InitScheme, Mlp};

const DIM: usize = 10;

fn env_with(sizes: Vec<f64>, seed: u64) -> Arc<StreamingEnv> {
    let video = VideoSpec::new(10, 1.0, 1e-3, sizes).unwrap();
    let mut rng = substream(seed, Stream::Mobility);
    let trace = Arc::new(generate_trace(&ScenarioConfig::default(), video.horizon() * 3, 1.0, &mut rng));
    Arc::new(StreamingEnv::new(trace, video, RadioConfig::default(), 80e6, None).unwrap())
}

fn init_rng(seed: u64) -> SimRng {
    substream(seed, Stream::Init)
}

/// Linear single-layer actor that outputs `c` Mbps everywhere.
fn constant_actor(c: f64) -> Mlp {
    Mlp::from_layers(vec![Dense { w: Array2::zeros((1, DIM)), b: Array1::from_elem(1, c), act: Activation::Linear }]).unwrap()
}

fn small_spec(algo: Algo, k: usize, episodes: usize, seed: u64) -> TrainSpec {
    let agent = AgentConfig {
        batch: 32,
        virtual_k: k,
        hidden_ddpg: 16,
        hidden_pds: 16,
        dynamics: Dynamics::Idealized,
        ..AgentConfig::default()
    };
    TrainSpec {
        algo,
        agent,
        scenario: ScenarioConfig::default(),
        video: VideoConfig { n_segments: 4, ..VideoConfig::default() },
        radio: RadioConfig::default(),
        episodes,
        seed,
        trace_margin: 3.0,
    }
}

/// A batch of transitions from a safe rollout.
fn batch_from_rollout(env: &Arc<StreamingEnv>, rate_mbps: f64) -> Vec<Experience> {
    let mut s = env.reset();
    let mut out = Vec::new();
    loop {
        let a = safety_layer(env, &s, rate_mbps).action;
        let step = env.step_idealized(&s, a).unwrap();
        out.push(Experience {
            env: env.clone(),
            state: s,
            action: a,
            reward: step.reward,
            next_state: step.next_state.clone(),
            done: step.done,
            is_virtual: false,
        });
        s = step.next_state;
        if step.done {
            return out;
        }
    }
}

#[test]
fn zero_noise_acts_deterministically() {
    let env = env_with(vec![8e6; 4], 1);
    let ddpg = Ddpg::new(DIM, 16, InitScheme::ACTOR_UNSATURATED.output_bias, &mut init_rng(1)).unwrap();
    let s = env.reset();
    let mut rng = substream(1, Stream::Exploration);
    let a = act_ddpg(&env, &s, &ddpg.actor, 0.0, &mut rng).unwrap();
    let b = act_ddpg(&env, &s, &ddpg.actor, 0.0, &mut rng).unwrap();
    assert_eq!(a, b);
    assert!((a.action - a.mu * 1e6).abs() < 1e-6);
}

#[test]
fn ddpg_action_clamps_at_bound() {
    let env = env_with(vec![8e6; 4], 2);
    let s = env.reset();
    let mut rng = substream(2, Stream::Exploration);
    // 79 + 5 of "noise" baked into the actor
    let a = act_ddpg(&env, &s, &constant_actor(84.0), 0.0, &mut rng).unwrap();
    assert_eq!(a.action, 80e6);
    let a = act_ddpg(&env, &s, &constant_actor(-3.0), 0.0, &mut rng).unwrap();
    assert_eq!(a.action, 0.0);
}

#[test]
fn paper_init_bias_gives_near_zero_rate() {
    let env = env_with(vec![8e6; 4], 3);
    let d = Ddpg::new(DIM, 16, InitScheme::ACTOR.output_bias, &mut init_rng(3)).unwrap();
    let a = act_ddpg(&env, &env.reset(), &d.actor, 0.0, &mut substream(3, Stream::Exploration)).unwrap();
    assert!(a.action < 1.0);
}

#[test]
fn safety_layer_examples() {
    let env = env_with(vec![8e6; 4], 4);
    let mut s = env.reset();
    s.buffer = 3e6;
    s.playback_pos = 4;
    assert_eq!(env.min_safe_rate(&s), 5e6);
    let lo = safety_layer(&env, &s, 2.0);
    assert_eq!(lo.action, 5e6);
    assert!(lo.floor_active && !lo.infeasible);
    let hi = safety_layer(&env, &s, 9.0);
    assert_eq!(hi.action, 9e6);
    assert!(!hi.floor_active);
}

#[test]
fn floor_above_bound_is_flagged_and_wins() {
    let env = env_with(vec![4.5e7; 4], 5);
    let mut s = env.reset();
    s.buffer = 0.0;
    s.playback_pos = 10;
    let out = safety_layer(&env, &s, 30.0);
    assert!(out.infeasible && out.action == 9e7);
    assert!(!env.step_idealized(&s, out.action).unwrap().stalled);
}

#[test]
fn replay_is_fifo_and_samples_filled_part() {
    let mut r = ReplayBuffer::new(5);
    let mut rng = substream(6, Stream::ReplaySampling);
    assert!(r.sample(&mut rng, 4).is_empty());
    for i in 0..3 {
        r.push(i);
    }
    assert!(r.sample(&mut rng, 100).iter().all(|&&v| v < 3));
    for i in 3..8 {
        r.push(i);
    }
    assert_eq!(r.len(), 5);
    let mut seen: Vec<i32> = r.sample(&mut rng, 500).into_iter().copied().collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen, vec![3, 4, 5, 6, 7]);
}

#[test]
fn trace_buffer_admits_completed_only() {
    let env = env_with(vec![8e6; 4], 7);
    let mut tb = TraceBuffer::new();
    assert!(tb.sample(&mut substream(7, Stream::TraceSampling)).is_none());
    tb.push_completed(env.trace.clone(), false);
    assert!(tb.is_empty());
    tb.push_completed(env.trace.clone(), true);
    assert_eq!(tb.len(), 1);
}

#[test]
fn plain_critic_on_zero_weights_is_its_bias() {
    let mut d = Ddpg::new(DIM, 8, -1.0, &mut init_rng(8)).unwrap();
    for l in d.critic.layers.iter_mut() {
        l.w.fill(0.0);
    }
    let s = Array2::from_elem((3, DIM), 0.4);
    assert_eq!(d.q_value(&s, &[0.0, 10.0, 70.0]).unwrap(), vec![-1.0; 3]);
}

#[test]
fn pds_critic_structure() {
    let env = env_with(vec![8e6; 4], 9);
    let p = PdsDdpg::new(DIM, 16, -1.0, &mut init_rng(9)).unwrap();
    let mut rng = substream(9, Stream::Exploration);
    for _ in 0..50 {
        let s = env.random_state(&mut rng);
        let mut x = Vec::new();
        pds_features(&env, &env.f_pds(&s, 0.0), &mut x);
        assert_eq!(critic_q_pds(&env, &s, 0.0, &p.v).unwrap(), p.v.predict_one(&x).unwrap()[0]);

        let a = env.min_safe_rate(&s) + 5e6;
        let mut shifted = p.v.clone();
        shifted.layers.last_mut().unwrap().b[0] += 2.5;
        let d = critic_q_pds(&env, &s, a, &shifted).unwrap() - critic_q_pds(&env, &s, a, &p.v).unwrap();
        assert!((d - 2.5).abs() < 1e-12);

        let h = 1.0;
        let fd = (critic_q_pds(&env, &s, a + h, &p.v).unwrap() - critic_q_pds(&env, &s, a - h, &p.v).unwrap()) / (2.0 * h) * 1e6;
        let g = critic_q_pds_grad_mbps(&env, &s, a, &p.v).unwrap();
        assert!((fd - g).abs() <= 1e-4 * g.abs().max(1.0), "{fd} {g}");
    }
}

#[test]
fn terminal_targets() {
    let env = env_with(vec![8e6; 4], 10);
    let cfg = AgentConfig { gamma: 1.0, ..AgentConfig::default() };
    let exps: Vec<Experience> = batch_from_rollout(&env, 10.0).into_iter().filter(|e| e.done).collect();
    assert!(!exps.is_empty());
    let batch: Vec<&Experience> = exps.iter().collect();
    let p = PdsDdpg::new(DIM, 16, -1.0, &mut init_rng(10)).unwrap();
    assert!(p.value_targets(&batch, &cfg).unwrap().iter().all(|&y| y == 0.0));

    // DDPG: target is r, so the pre-update loss is mean (Q − r)²
    let mut d = Ddpg::new(DIM, 16, -1.0, &mut init_rng(10)).unwrap();
    let mut rows = Vec::new();
    for e in &batch {
        features(&env, &e.state, &mut rows);
    }
    let s = Array2::from_shape_vec((batch.len(), DIM), rows).unwrap();
    let acts: Vec<f64> = batch.iter().map(|e| e.action / 1e6).collect();
    let q = d.q_value(&s, &acts).unwrap();
    let expect: f64 = q.iter().zip(&batch).map(|(q, e)| (q - e.reward).powi(2)).sum::<f64>() / batch.len() as f64;
    let stats = d.update(&batch, &cfg).unwrap();
    assert!((stats.critic_loss - expect).abs() < 1e-12 * expect.max(1.0));
}

#[test]
fn critic_loss_falls_on_a_frozen_batch() {
    let env = env_with(vec![8e6; 4], 11);
    let cfg = AgentConfig::default();
    let exps = batch_from_rollout(&env, 12.0);
    let batch: Vec<&Experience> = exps.iter().collect();
    let mut p = PdsDdpg::new(DIM, 16, -1.0, &mut init_rng(11)).unwrap();
    let mut d = Ddpg::new(DIM, 16, -1.0, &mut init_rng(11)).unwrap();
    let (p0, d0) = (p.update(&batch, &cfg).unwrap().critic_loss, d.update(&batch, &cfg).unwrap().critic_loss);
    let (mut p1, mut d1) = (0.0, 0.0);
    for _ in 0..100 {
        p1 = p.update(&batch, &cfg).unwrap().critic_loss;
        d1 = d.update(&batch, &cfg).unwrap().critic_loss;
    }
    assert!(p1 < p0 && d1 < d0, "pds {p0} -> {p1}, ddpg {d0} -> {d1}");
}

#[test]
fn targets_track_by_omega() {
    let env = env_with(vec![8e6; 4], 12);
    let cfg = AgentConfig { omega: 0.01, ..AgentConfig::default() };
    let exps = batch_from_rollout(&env, 12.0);
    let batch: Vec<&Experience> = exps.iter().collect();
    let mut p = PdsDdpg::new(DIM, 16, -1.0, &mut init_rng(12)).unwrap();
    let old = p.v_target.clone();
    p.update(&batch, &cfg).unwrap();
    for ((t, o), n) in p.v_target.layers[0].w.iter().zip(old.layers[0].w.iter()).zip(p.v.layers[0].w.iter()) {
        assert!((t - (0.01 * n + 0.99 * o)).abs() < 1e-15);
    }
}

#[test]
fn floor_blocks_the_actor_gradient() {
    let env = env_with(vec![8e6; 4], 13);
    let mut s = env.reset();
    s.buffer = 0.0;
    s.playback_pos = 10;
    // initial actor asks ~8 Mbps, the floor is 16
    let p = PdsDdpg::new(DIM, 16, InitScheme::ACTOR_UNSATURATED.output_bias, &mut init_rng(13)).unwrap();
    let mut rows = Vec::new();
    features(&env, &s, &mut rows);
    assert!(p.actor.predict_one(&rows).unwrap()[0] * 1e6 < env.min_safe_rate(&s));
    let e = Experience { env: env.clone(), state: s.clone(), action: 0.0, reward: 0.0, next_state: s, done: false, is_virtual: false };
    let (g, _) = p.actor_gradient(&[&e]).unwrap();
    assert!(g.dw.iter().all(|a| a.iter().all(|&v| v == 0.0)));
    assert!(g.db.iter().all(|a| a.iter().all(|&v| v == 0.0)));
}

#[test]
fn replaying_recorded_actions_reproduces_the_episode() {
    let env = env_with(vec![8e6; 4], 14);
    let mut rng = substream(14, Stream::Exploration);
    let actor = PdsDdpg::new(DIM, 16, InitScheme::ACTOR_UNSATURATED.output_bias, &mut init_rng(14)).unwrap().actor;
    let first = rollout_policy(&env, None, |e, s| Ok(act_safe(e, s, &actor, 3.0, &mut rng)?.action)).unwrap();
    let mut it = first.rates.clone().into_iter();
    let again = rollout_policy(&env, None, |_, _| Ok(it.next().unwrap())).unwrap();
    assert_eq!(first, again);
}

#[test]
fn virtual_episodes_multiply_replay_growth() {
    let mut t0 = Trainer::new(small_spec(Algo::PdsDdpg, 0, 5, 15)).unwrap();
    let mut t4 = Trainer::new(small_spec(Algo::PdsDdpg, 4, 5, 15)).unwrap();
    let l0 = t0.run_episode().unwrap();
    let l4 = t4.run_episode().unwrap();
    assert_eq!(l0.virtual_frames, 0);
    assert_eq!(t4.replay.len(), l4.real_frames + l4.virtual_frames);
    let ratio = t4.replay.len() as f64 / t0.replay.len() as f64;
    assert!((ratio - 5.0).abs() < 0.5, "{ratio}");
}

#[test]
fn training_is_deterministic_and_safe() {
    let spec = small_spec(Algo::PdsDdpg, 2, 6, 16);
    let (ta, la) = train(spec.clone()).unwrap();
    let (tb, lb) = train(spec).unwrap();
    assert_eq!(la, lb);
    assert_eq!(ta.policy().actor.layers, tb.policy().actor.layers);
    assert!(la.iter().all(|l| l.violations == 0 && l.completed));
    assert!(ta.updates > 0);
}

#[test]
fn ddpg_training_runs_with_penalty() {
    let (t, logs) = train(small_spec(Algo::Ddpg, 0, 3, 17)).unwrap();
    assert_eq!(logs.len(), 3);
    assert!(t.total_real_frames > 0 && t.learner.is_finite());
}

#[test]
fn noise_schedule_is_linear() {
    let c = AgentConfig::default();
    assert_eq!(c.noise_std(0, 11), 10.0);
    assert!((c.noise_std(5, 11) - 5.0).abs() < 1e-12);
    assert_eq!(c.noise_std(10, 11), 0.0);
}

#[test]
fn bad_agent_config_rejected() {
    for c in [
        AgentConfig { gamma: 1.5, ..AgentConfig::default() },
        AgentConfig { lr_actor: 0.0, ..AgentConfig::default() },
        AgentConfig { batch: 0, ..AgentConfig::default() },
    ] {
        assert!(matches!(c.validate(), Err(streampower::Error::Config(_))));
    }
}
