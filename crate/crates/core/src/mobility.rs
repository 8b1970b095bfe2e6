//! User mobility along a road of base stations and the resulting channels.
//!
//! Base stations sit on an infinite line at `bs_spacing`; roads run parallel
//! to it at the configured perpendicular offsets. Per-frame large-scale gains
//! come from the log-distance path loss, per-slot small-scale gains are
//! i.i.d. unit-mean exponential (Rayleigh power gain).

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const TRACE_CSV_VERSION: &str = "# streampower trace v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ConstantSpeed,
    RandomAccelMultiroad,
    TrafficLight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Distance between adjacent base stations (m).
    pub bs_spacing: f64,
    /// Perpendicular road distances (m). Single-road scenarios use the first.
    pub road_offsets: Vec<f64>,
    /// Initial speed drawn uniformly from this range (m/s).
    pub speed_init_range: [f64; 2],
    /// Speeds are clamped to this range under random acceleration (m/s).
    pub speed_clamp: [f64; 2],
    /// Std of the per-frame acceleration (m/s²).
    pub accel_std: f64,
    /// Stop duration at the light drawn uniformly from this range (s).
    pub stop_duration_range: [f64; 2],
    /// Length of the road segment where traffic-light episodes start (m).
    pub road_length: f64,
    /// Light position along the road (m).
    pub light_position: f64,
    /// Path loss intercept (dB).
    pub pathloss_a: f64,
    /// Path loss slope (dB per decade of distance).
    pub pathloss_b: f64,
    /// N_b: number of strongest base stations tracked.
    pub n_bs_tracked: usize,
    /// N_t: number of past frames kept in the state.
    pub history_len: usize,
}

impl ScenarioConfig {
    pub fn preset(kind: ScenarioKind) -> Self {
        let base = ScenarioConfig {
            kind,
            bs_spacing: 500.0,
            road_offsets: vec![100.0, 200.0],
            speed_init_range: [15.0, 15.0],
            speed_clamp: [10.0, 20.0],
            accel_std: 0.0,
            stop_duration_range: [0.0, 60.0],
            road_length: 2000.0,
            light_position: 1000.0,
            pathloss_a: 35.3,
            pathloss_b: 37.6,
            n_bs_tracked: 2,
            history_len: 2,
        };
        match kind {
            ScenarioKind::ConstantSpeed | ScenarioKind::TrafficLight => base,
            ScenarioKind::RandomAccelMultiroad => ScenarioConfig {
                speed_init_range: [10.0, 20.0],
                accel_std: 0.3,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario: {m}")));
        if !(self.bs_spacing > 0.0) {
            return bad("bs_spacing must be positive");
        }
        if self.road_offsets.is_empty() || self.road_offsets.iter().any(|&o| !(o > 0.0)) {
            return bad("road_offsets must be nonempty and positive");
        }
        let [lo, hi] = self.speed_init_range;
        if !(lo >= 0.0 && hi >= lo) {
            return bad("speed_init_range must satisfy 0 <= lo <= hi");
        }
        let [clo, chi] = self.speed_clamp;
        if !(clo >= 0.0 && chi >= clo) {
            return bad("speed_clamp must satisfy 0 <= lo <= hi");
        }
        if !(self.accel_std >= 0.0) {
            return bad("accel_std must be nonnegative");
        }
        let [slo, shi] = self.stop_duration_range;
        if !(slo >= 0.0 && shi >= slo) {
            return bad("stop_duration_range must satisfy 0 <= lo <= hi");
        }
        if self.n_bs_tracked < 1 {
            return bad("n_bs_tracked must be at least 1");
        }
        Ok(())
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::preset(ScenarioKind::ConstantSpeed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityState {
    pub position: f64,
    pub velocity: f64,
    /// Speed resumed after a stop.
    pub cruise_speed: f64,
    /// Remaining stop time at the light (s).
    pub stop_remaining: f64,
    pub light_passed: bool,
}

impl MobilityState {
    pub fn moving(position: f64, velocity: f64) -> Self {
        MobilityState { position, velocity, cruise_speed: velocity, stop_remaining: 0.0, light_passed: false }
    }
}

/// Advances the user by one frame of length `dt`.
pub fn step_mobility(state: MobilityState, scenario: &ScenarioConfig, dt: f64, rng: &mut SimRng) -> MobilityState {
    let mut s = state;
    match scenario.kind {
        ScenarioKind::ConstantSpeed => {
            s.position += s.velocity * dt;
        }
        ScenarioKind::RandomAccelMultiroad => {
            s.position += s.velocity * dt;
            let a = if scenario.accel_std > 0.0 {
                Normal::new(0.0, scenario.accel_std).expect("std checked").sample(rng)
            } else {
                0.0
            };
            let [lo, hi] = scenario.speed_clamp;
            s.velocity = (s.velocity + a * dt).clamp(lo, hi);
            s.cruise_speed = s.velocity;
        }
        ScenarioKind::TrafficLight => {
            let mut budget = dt;
            if s.stop_remaining > 0.0 {
                let wait = s.stop_remaining.min(budget);
                s.stop_remaining -= wait;
                budget -= wait;
            }
            if budget > 0.0 {
                let next = s.position + s.cruise_speed * budget;
                if !s.light_passed && s.position <= scenario.light_position && next > scenario.light_position {
                    s.light_passed = true;
                    let [lo, hi] = scenario.stop_duration_range;
                    let stop = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    let to_light = (scenario.light_position - s.position) / s.cruise_speed.max(f64::MIN_POSITIVE);
                    let after_light = budget - to_light;
                    let wait = stop.min(after_light);
                    s.stop_remaining = stop - wait;
                    s.position = scenario.light_position + s.cruise_speed * (after_light - wait);
                } else {
                    s.position = next;
                }
            }
            s.velocity = if s.stop_remaining > 0.0 { 0.0 } else { s.cruise_speed };
        }
    }
    s
}

fn pathloss_gain(d: f64, scenario: &ScenarioConfig) -> f64 {
    10f64.powf(-(scenario.pathloss_a + scenario.pathloss_b * d.log10()) / 10.0)
}

/// Gains to the N_b strongest base stations, descending.
pub fn large_scale_gains(position: f64, road_offset: f64, scenario: &ScenarioConfig) -> Vec<f64> {
    let nb = scenario.n_bs_tracked;
    let k0 = (position / scenario.bs_spacing).round() as i64;
    let reach = nb as i64 + 1;
    let mut gains: Vec<f64> = (k0 - reach..=k0 + reach)
        .map(|k| {
            let dx = position - k as f64 * scenario.bs_spacing;
            pathloss_gain((dx * dx + road_offset * road_offset).sqrt(), scenario)
        })
        .collect();
    gains.sort_by(|a, b| b.total_cmp(a));
    gains.truncate(nb);
    gains
}

/// I.i.d. unit-mean exponential small-scale power gains.
pub fn sample_small_scale(rng: &mut SimRng, n_slots: usize) -> Vec<f64> {
    (0..n_slots).map(|_| Exp1.sample(rng)).collect()
}

pub fn fill_small_scale(rng: &mut SimRng, out: &mut [f64]) {
    for g in out.iter_mut() {
        *g = Exp1.sample(rng);
    }
}

/// Per-frame channel record for one episode, including N_t pre-roll frames.
///
/// Frame t (1-based, may be ≤ 0 for pre-roll) lives at index t − 1 + N_t.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub history_len: usize,
    pub road_offset: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub alphas: Vec<Vec<f64>>,
}

impl ChannelTrace {
    /// Number of frames t ≥ 1 available.
    pub fn horizon(&self) -> usize {
        self.alphas.len() - self.history_len
    }

    fn index(&self, t: i64) -> usize {
        let i = t - 1 + self.history_len as i64;
        assert!(i >= 0 && (i as usize) < self.alphas.len(), "frame {t} outside trace");
        i as usize
    }

    pub fn alpha_vec(&self, t: i64) -> &[f64] {
        &self.alphas[self.index(t)]
    }

    /// Serving-cell gain α_{1,t}.
    pub fn alpha(&self, t: i64) -> f64 {
        self.alphas[self.index(t)][0]
    }

    pub fn position(&self, t: i64) -> f64 {
        self.positions[self.index(t)]
    }

    pub fn n_bs(&self) -> usize {
        self.alphas.first().map_or(0, |a| a.len())
    }

    /// Serving-cell gains for frames 1..=horizon.
    pub fn serving_gains(&self) -> Vec<f64> {
        self.alphas[self.history_len..].iter().map(|a| a[0]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_CSV_VERSION} history_len={} road_offset={}", self.history_len, self.road_offset)?;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["frame".to_string(), "position".into(), "v".into()];
        header.extend((1..=self.n_bs()).map(|k| format!("alpha{k}")));
        out.write_record(&header)?;
        for (i, a) in self.alphas.iter().enumerate() {
            let t = i as i64 + 1 - self.history_len as i64;
            let mut rec = vec![t.to_string(), format!("{:e}", self.positions[i]), format!("{:e}", self.velocities[i])];
            rec.extend(a.iter().map(|x| format!("{x:e}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut r: R) -> Result<Self> {
        let mut first = String::new();
        r.read_line(&mut first)?;
        let meta = first
            .trim()
            .strip_prefix(TRACE_CSV_VERSION)
            .ok_or_else(|| Error::Parse(format!("unexpected trace header {first:?}")))?;
        let mut history_len = None;
        let mut road_offset = None;
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("history_len", v)) => history_len = v.parse().ok(),
                Some(("road_offset", v)) => road_offset = v.parse().ok(),
                _ => {}
            }
        }
        let history_len = history_len.ok_or_else(|| Error::Parse("trace header lacks history_len".into()))?;
        let road_offset = road_offset.ok_or_else(|| Error::Parse("trace header lacks road_offset".into()))?;
        let mut rd = csv::Reader::from_reader(r);
        let (mut positions, mut velocities, mut alphas) = (vec![], vec![], vec![]);
        for rec in rd.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse(format!("bad trace field {i} in {rec:?}")))
            };
            positions.push(num(1)?);
            velocities.push(num(2)?);
            alphas.push((3..rec.len()).map(num).collect::<Result<Vec<_>>>()?);
        }
        if alphas.len() <= history_len {
            return Err(Error::Parse("trace has no frames after the pre-roll".into()));
        }
        Ok(ChannelTrace { history_len, road_offset, positions, velocities, alphas })
    }
}

/// Initial position and speed for a fresh episode.
pub fn initial_state(scenario: &ScenarioConfig, rng: &mut SimRng) -> (MobilityState, f64) {
    let [lo, hi] = scenario.speed_init_range;
    let v0 = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let road = match scenario.kind {
        ScenarioKind::RandomAccelMultiroad => scenario.road_offsets[rng.random_range(0..scenario.road_offsets.len())],
        _ => scenario.road_offsets[0],
    };
    let x0 = match scenario.kind {
        ScenarioKind::TrafficLight => rng.random_range(0.0..scenario.road_length),
        _ => rng.random_range(0.0..scenario.bs_spacing),
    };
    (MobilityState::moving(x0, v0), road)
}

/// Trace of `horizon` frames starting from `start`, with N_t pre-roll frames
/// obtained by running the user backwards at its initial speed.
pub fn trace_from(
    start: MobilityState,
    road_offset: f64,
    scenario: &ScenarioConfig,
    horizon: usize,
    dt: f64,
    rng: &mut SimRng,
) -> ChannelTrace {
    let nt = scenario.history_len;
    let n = nt + horizon;
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for k in (1..=nt).rev() {
        positions.push(start.position - k as f64 * start.velocity * dt);
        velocities.push(start.velocity);
    }
    let mut s = start;
    for t in 0..horizon {
        if t > 0 {
            s = step_mobility(s, scenario, dt, rng);
        }
        positions.push(s.position);
        velocities.push(s.velocity);
    }
    let alphas = positions.iter().map(|&x| large_scale_gains(x, road_offset, scenario)).collect();
    ChannelTrace { history_len: nt, road_offset, positions, velocities, alphas }
}

pub fn generate_trace(scenario: &ScenarioConfig, horizon: usize, dt: f64, rng: &mut SimRng) -> ChannelTrace {
    let (start, road) = initial_state(scenario, rng);
    trace_from(start, road, scenario, horizon, dt, rng)
}
