//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (uncaptured) and then asserts. Tests share one lock so timings are
//! not distorted by each other, and the long training runs are shared.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use streampower::agents::train::{evaluate, train_with, EpisodeEval, TestSet, TrainSpec};
use streampower::agents::{AgentConfig, Algo, Dynamics, Policy};
use streampower::baselines::{non_predictive_rate, run_non_predictive, solve_offline_optimal};
use streampower::env::{RadioConfig, VideoConfig};
use streampower::harness::{run_suite, Report, Suite};
use streampower::mobility::{ScenarioConfig, ScenarioKind};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, what: &str, pass: bool, detail: &str) {
    let line = format!("{} criterion {id} ({what}): {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut err = std::io::stderr();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
}

fn note(text: &str) {
    let _ = std::io::stderr().write_all(format!("    {text}\n").as_bytes());
}

fn suite_verdict(id: u32, what: &str, report: &Report, secs: f64, limit_secs: f64) -> bool {
    for line in report.to_string().lines() {
        note(line);
    }
    let pass = report.passed() && secs < limit_secs;
    let failed = report.checks.iter().filter(|c| !c.pass()).count();
    verdict(id, what, pass, &format!("{failed} failed checks, {secs:.1} s (limit {limit_secs} s)"));
    pass
}

#[test]
fn c1_power_math_oracles() {
    let _g = serial();
    let t = Instant::now();
    let report = run_suite(Suite::PowerMath, 0).unwrap();
    assert!(suite_verdict(1, "power-math oracles", &report, t.elapsed().as_secs_f64(), 60.0));
}

#[test]
fn c2_fading_concentration() {
    let _g = serial();
    let t = Instant::now();
    let report = run_suite(Suite::Prop2, 0).unwrap();
    assert!(suite_verdict(2, "per-frame concentration under fading", &report, t.elapsed().as_secs_f64(), 120.0));
}

#[test]
fn c3_gradient_suite() {
    let _g = serial();
    let t = Instant::now();
    let report = run_suite(Suite::Gradients, 0).unwrap();
    assert!(suite_verdict(3, "analytic vs finite-difference gradients", &report, t.elapsed().as_secs_f64(), 60.0));
}

// ----- training-based criteria -----

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EVAL_EVERY: usize = 10;
const TEST_SEED: u64 = 0xacce_0001;
const MATCHED_SEED: u64 = 0xacce_0002;

fn desk_video() -> VideoConfig {
    VideoConfig { n_segments: 8, ..VideoConfig::default() }
}

fn desk_agent(virtual_k: usize) -> AgentConfig {
    AgentConfig { batch: 64, virtual_k, dynamics: Dynamics::Idealized, ..AgentConfig::default() }
}

fn desk_spec(algo: Algo, virtual_k: usize, episodes: usize, seed: u64) -> TrainSpec {
    TrainSpec {
        algo,
        agent: desk_agent(virtual_k),
        scenario: ScenarioConfig::preset(ScenarioKind::ConstantSpeed),
        video: desk_video(),
        radio: RadioConfig::default(),
        episodes,
        seed,
        trace_margin: 3.0,
    }
}

struct Bench {
    tests: TestSet,
    oracle: f64,
    non_predictive: f64,
}

fn test_set(n: usize, seed: u64) -> TestSet {
    let video = desk_video();
    let agent = desk_agent(0);
    TestSet::generate(&ScenarioConfig::default(), &video, &RadioConfig::default(), agent.rate_bound(), None, n, seed, 3.0).unwrap()
}

fn oracle_energies(tests: &TestSet) -> Vec<f64> {
    tests
        .envs
        .iter()
        .map(|e| solve_offline_optimal(&e.trace, &e.video, &e.radio, e.rate_bound).unwrap().energy)
        .collect()
}

fn non_predictive_energies(tests: &TestSet) -> Vec<f64> {
    tests.envs.iter().map(|e| run_non_predictive(e).unwrap().1).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn bench() -> &'static Bench {
    static B: OnceLock<Bench> = OnceLock::new();
    B.get_or_init(|| {
        let tests = test_set(20, TEST_SEED);
        let oracle = mean(&oracle_energies(&tests));
        let non_predictive = mean(&non_predictive_energies(&tests));
        Bench { tests, oracle, non_predictive }
    })
}

struct Run {
    seed: u64,
    /// Real episodes until mean test energy ≤ 1.15 × oracle and below non-predictive.
    within_15: Option<usize>,
    /// Real episodes until ≤ 1.10 × oracle with every test session completed stall-free.
    within_10: Option<usize>,
    best_ratio: f64,
    best_policy: Option<Policy>,
    episodes_run: usize,
    violations: usize,
}

fn clean(ev: &[EpisodeEval]) -> bool {
    ev.iter().all(|e| e.stalls == 0 && e.completed)
}

/// Trains until the 110% threshold is met or the budget runs out,
/// evaluating the noise-free policy every few episodes.
fn run_to_threshold(spec: TrainSpec) -> Run {
    let b = bench();
    let seed = spec.seed;
    let mut run = Run {
        seed,
        within_15: None,
        within_10: None,
        best_ratio: f64::INFINITY,
        best_policy: None,
        episodes_run: 0,
        violations: 0,
    };
    let (trainer, _) = train_with(spec, |tr, log| {
        let done = log.episode + 1;
        if done % EVAL_EVERY != 0 {
            return true;
        }
        let policy = tr.policy();
        let ev = evaluate(&policy, &b.tests).unwrap();
        let e = ev.iter().map(|e| e.energy).sum::<f64>() / ev.len() as f64;
        let ratio = e / b.oracle;
        let ok = clean(&ev);
        if ok && ratio < run.best_ratio {
            run.best_ratio = ratio;
            run.best_policy = Some(policy);
        }
        if run.within_15.is_none() && ratio <= 1.15 && e < b.non_predictive {
            run.within_15 = Some(done);
        }
        if run.within_10.is_none() && ok && ratio <= 1.10 {
            run.within_10 = Some(done);
        }
        run.within_10.is_none()
    })
    .unwrap();
    run.episodes_run = trainer.episodes_done();
    run.violations = trainer.total_violations;
    run
}

fn virtual_runs() -> &'static Vec<Run> {
    static R: OnceLock<Vec<Run>> = OnceLock::new();
    R.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&s| {
                let t = Instant::now();
                let r = run_to_threshold(desk_spec(Algo::PdsDdpg, 4, 500, s));
                note(&format!(
                    "pds-ddpg K=4 seed {s}: best ratio {:.3}, 115% at {:?}, 110% at {:?}, {} episodes, {:.0} s",
                    r.best_ratio,
                    r.within_15,
                    r.within_10,
                    r.episodes_run,
                    t.elapsed().as_secs_f64()
                ));
                r
            })
            .collect()
    })
}

#[test]
fn c4_safety_layer_never_stalls() {
    let _g = serial();
    let t = Instant::now();
    let mut total = 0;
    let mut frames = 0;
    for &seed in &SEEDS {
        let spec = TrainSpec {
            algo: Algo::PdsDdpg,
            agent: AgentConfig { batch: 64, virtual_k: 0, dynamics: Dynamics::Idealized, ..AgentConfig::default() },
            scenario: ScenarioConfig::default(),
            video: VideoConfig::default(),
            radio: RadioConfig::default(),
            episodes: 300,
            seed,
            trace_margin: 3.0,
        };
        let (trainer, logs) = train_with(spec, |_, _| true).unwrap();
        assert_eq!(logs.len(), 300);
        assert!(trainer.learner.is_finite());
        let infeasible: usize = logs.iter().map(|l| l.infeasible_floors).sum();
        note(&format!(
            "seed {seed}: {} violating frames of {}, {infeasible} floors above the rate bound",
            trainer.total_violations, trainer.total_real_frames
        ));
        total += trainer.total_violations;
        frames += trainer.total_real_frames;
    }
    let pass = total == 0;
    verdict(4, "zero QoS violations over 300 training episodes, 5 seeds", pass, &format!("{total} violating frames of {frames}, {:.0} s", t.elapsed().as_secs_f64()));
    assert!(pass);
}

#[test]
fn c5_converges_near_oracle() {
    let _g = serial();
    let t = Instant::now();
    let b = bench();
    note(&format!("test oracle {:.4} J, non-predictive {:.4} J", b.oracle, b.non_predictive));
    let runs = virtual_runs();
    let hits = runs.iter().filter(|r| r.within_15.is_some_and(|e| e <= 500)).count();
    let pass = hits >= 4;
    verdict(5, "within 15% of oracle in <= 500 episodes", pass, &format!("{hits}/5 seeds, {:.0} s", t.elapsed().as_secs_f64()));
    assert!(pass);
}

/// Median with censored runs above every finite value.
fn median_episodes(v: &[Option<usize>]) -> f64 {
    let mut x: Vec<f64> = v.iter().map(|e| e.map_or(f64::INFINITY, |n| n as f64)).collect();
    x.sort_by(f64::total_cmp);
    x[x.len() / 2]
}

#[test]
fn c6_virtual_experience_accelerates() {
    let _g = serial();
    let t = Instant::now();
    let with_virtual: Vec<Option<usize>> = virtual_runs().iter().map(|r| r.within_10).collect();
    let mut pds = Vec::new();
    let mut ddpg = Vec::new();
    for &seed in &SEEDS {
        let r = run_to_threshold(desk_spec(Algo::PdsDdpg, 0, 1000, seed));
        note(&format!("pds-ddpg K=0 seed {seed}: best ratio {:.3}, 110% at {:?}", r.best_ratio, r.within_10));
        pds.push(r.within_10);
        let r = run_to_threshold(desk_spec(Algo::Ddpg, 0, 1000, seed));
        note(&format!("ddpg seed {seed}: best ratio {:.3}, 110% at {:?}, {} violations", r.best_ratio, r.within_10, r.violations));
        ddpg.push(r.within_10);
    }
    let (a, b, c) = (median_episodes(&with_virtual), median_episodes(&pds), median_episodes(&ddpg));
    let pass = a < b && b < c;
    verdict(
        6,
        "episodes to 110% of oracle: virtual < pds < ddpg (median)",
        pass,
        &format!("{a} < {b} < {c}, {:.0} s", t.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

fn converged() -> Vec<&'static Run> {
    virtual_runs().iter().filter(|r| r.within_15.is_some() && r.best_policy.is_some()).collect()
}

fn matched() -> &'static (TestSet, Vec<f64>, Vec<f64>) {
    static M: OnceLock<(TestSet, Vec<f64>, Vec<f64>)> = OnceLock::new();
    M.get_or_init(|| {
        let tests = test_set(100, MATCHED_SEED);
        let o = oracle_energies(&tests);
        let n = non_predictive_energies(&tests);
        (tests, o, n)
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn c7_policy_tracks_the_channel() {
    let _g = serial();
    let (tests, _, _) = matched();
    let runs = converged();
    let mut worst = f64::INFINITY;
    for r in &runs {
        let ev = evaluate(r.best_policy.as_ref().unwrap(), tests).unwrap();
        let rates: Vec<f64> = ev.iter().flat_map(|e| e.rates.iter().copied()).collect();
        let alphas: Vec<f64> = ev.iter().flat_map(|e| e.alphas.iter().copied()).collect();
        let rho = spearman(&rates, &alphas);
        note(&format!("seed {}: Spearman rho(rate, alpha) = {rho:.3}", r.seed));
        worst = worst.min(rho);
    }
    // the non-predictive rate is one value per segment
    let mut flat = true;
    for env in &tests.envs {
        let mut s = env.reset();
        let mut seg_rate: Vec<Option<f64>> = vec![None; env.video.n_segments() + 2];
        while !env.is_done(&s) {
            let a = non_predictive_rate(&s, &env.video);
            let slot = &mut seg_rate[s.seg_index];
            flat &= slot.is_none_or(|v| v == a);
            *slot = Some(a);
            s = env.step_idealized(&s, a).unwrap().next_state;
        }
    }
    let pass = !runs.is_empty() && worst > 0.5 && flat;
    verdict(
        7,
        "learned rate follows alpha, non-predictive constant per segment",
        pass,
        &format!("{} converged policies, min rho {worst:.3}, non-predictive constant per segment: {flat}", runs.len()),
    );
    assert!(pass);
}

#[test]
fn c8_baselines_bracket_the_learned_policy() {
    let _g = serial();
    let (tests, oracle, non_pred) = matched();
    let runs = converged();
    let mut worst: f64 = 1.0;
    for r in &runs {
        let ev = evaluate(r.best_policy.as_ref().unwrap(), tests).unwrap();
        let ok = ev
            .iter()
            .zip(oracle.iter().zip(non_pred))
            .filter(|(e, (o, n))| **o <= e.energy * (1.0 + 1e-9) && e.energy <= **n && e.stalls == 0)
            .count();
        let frac = ok as f64 / ev.len() as f64;
        note(&format!(
            "seed {}: oracle <= learned <= non-predictive on {ok}/{} traces (mean {:.3} / {:.3} / {:.3} J)",
            r.seed,
            ev.len(),
            mean(oracle),
            ev.iter().map(|e| e.energy).sum::<f64>() / ev.len() as f64,
            mean(non_pred)
        ));
        worst = worst.min(frac);
    }
    let pass = !runs.is_empty() && worst >= 0.95;
    verdict(8, "oracle <= learned <= non-predictive on >= 95% of traces", pass, &format!("{} converged policies, min fraction {worst:.3}", runs.len()));
    assert!(pass);
}
