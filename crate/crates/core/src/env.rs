//! Streaming session MDP.
//!
//! Timeline: segment 1 is delivered before frame 1 and starts playing in
//! frame 1. `l_t` counts frames of the current segment played by the end of
//! frame t, so l₁ = 1 and a stall-free session spans (N_v − 1)·L_v decision
//! frames, the last of which must leave segment N_v in the buffer.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::mobility::{fill_small_scale, ChannelTrace};
use crate::power_math::{expected_power, optimal_slot_power, xi_from_rate_rayleigh, LinkParams};
use crate::rng::SimRng;

/// Bits below which buffer deficits and remaining downloads are treated as
/// zero. Covers floating-point drift in cumulative sums of ~1e8 bits.
pub const BIT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideoConfig {
    pub n_segments: usize,
    pub frames_per_segment: usize,
    /// Frame duration ΔT (s).
    pub dt: f64,
    /// Slot duration τ (s).
    pub tau: f64,
    /// Mean and std of the per-segment bitrate (bit/s).
    pub bitrate_mean: f64,
    pub bitrate_std: f64,
    /// Bitrates are redrawn outside mean ± this many std.
    pub truncate_sigmas: f64,
    /// Power amplifier efficiency and circuit power. Kept for completeness;
    /// reported energy is transmit energy only.
    pub rho_e: f64,
    pub p_circuit: f64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        VideoConfig {
            n_segments: 15,
            frames_per_segment: 10,
            dt: 1.0,
            tau: 1e-3,
            bitrate_mean: 8e6,
            bitrate_std: 0.3e6,
            truncate_sigmas: 3.0,
            rho_e: 1.0,
            p_circuit: 0.0,
        }
    }
}

impl VideoConfig {
    pub fn n_slots(&self) -> Result<usize> {
        let n = (self.dt / self.tau).round();
        if !(n >= 1.0) || (n * self.tau - self.dt).abs() > 1e-9 * self.dt {
            return Err(Error::Config(format!("dt = {} is not a whole number of slots of {}", self.dt, self.tau)));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_segments < 2 || self.frames_per_segment < 1 {
            return Err(Error::Config("video: need n_segments >= 2 and frames_per_segment >= 1".into()));
        }
        if !(self.dt > 0.0 && self.tau > 0.0 && self.bitrate_mean > 0.0 && self.bitrate_std >= 0.0) {
            return Err(Error::Config("video: dt, tau, bitrate_mean must be positive".into()));
        }
        if self.bitrate_mean - self.truncate_sigmas * self.bitrate_std <= 0.0 {
            return Err(Error::Config("video: truncated bitrate range must stay positive".into()));
        }
        self.n_slots().map(|_| ())
    }

    /// Decision frames of a stall-free session.
    pub fn horizon(&self) -> usize {
        (self.n_segments - 1) * self.frames_per_segment
    }

    pub fn sample_spec(&self, rng: &mut SimRng) -> Result<VideoSpec> {
        self.validate()?;
        let seg_secs = self.frames_per_segment as f64 * self.dt;
        let sizes = if self.bitrate_std > 0.0 {
            let dist = Normal::new(self.bitrate_mean, self.bitrate_std).expect("std checked");
            let half = self.truncate_sigmas * self.bitrate_std;
            (0..self.n_segments)
                .map(|_| loop {
                    let r: f64 = dist.sample(rng);
                    if (r - self.bitrate_mean).abs() <= half {
                        break r * seg_secs;
                    }
                })
                .collect()
        } else {
            vec![self.bitrate_mean * seg_secs; self.n_segments]
        };
        VideoSpec::new(self.frames_per_segment, self.dt, self.tau, sizes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSpec {
    pub frames_per_segment: usize,
    pub dt: f64,
    pub tau: f64,
    pub n_slots: usize,
    pub segment_sizes: Vec<f64>,
    total: f64,
}

impl VideoSpec {
    pub fn new(frames_per_segment: usize, dt: f64, tau: f64, segment_sizes: Vec<f64>) -> Result<Self> {
        if segment_sizes.len() < 2 || segment_sizes.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("video: need at least two segments, all sizes positive".into()));
        }
        if frames_per_segment == 0 {
            return Err(Error::Config("video: frames_per_segment must be positive".into()));
        }
        let n_slots = (dt / tau).round() as usize;
        if n_slots == 0 || (n_slots as f64 * tau - dt).abs() > 1e-9 * dt {
            return Err(Error::Config(format!("dt = {dt} is not a whole number of slots of {tau}")));
        }
        let total = segment_sizes.iter().sum();
        Ok(VideoSpec { frames_per_segment, dt, tau, n_slots, segment_sizes, total })
    }

    pub fn n_segments(&self) -> usize {
        self.segment_sizes.len()
    }

    pub fn total_bits(&self) -> f64 {
        self.total
    }

    /// S_n with 1-based n; 0 past the last segment.
    pub fn size(&self, n: usize) -> f64 {
        if n >= 1 && n <= self.segment_sizes.len() {
            self.segment_sizes[n - 1]
        } else {
            0.0
        }
    }

    pub fn horizon(&self) -> usize {
        (self.n_segments() - 1) * self.frames_per_segment
    }
}

/// Radio parameters shared by every frame; α comes from the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub bandwidth_hz: f64,
    pub noise_dbm: f64,
    pub p_max_dbm: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig { bandwidth_hz: 20e6, noise_dbm: -95.0, p_max_dbm: 46.0 }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

impl RadioConfig {
    pub fn sigma2(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn p_max(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    pub fn link(&self, alpha: f64) -> LinkParams {
        LinkParams { alpha, sigma2: self.sigma2(), bandwidth: self.bandwidth_hz, p_max: self.p_max() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) || !self.noise_dbm.is_finite() || !self.p_max_dbm.is_finite() {
            return Err(Error::Config("radio: bandwidth must be positive and powers finite".into()));
        }
        Ok(())
    }
}

/// Stall penalty of the plain DDPG reward, λ·clip(deficit in Mb, 0, cap).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub lambda: f64,
    pub cap: f64,
}

impl Penalty {
    pub fn value(&self, deficit_bits: f64) -> f64 {
        self.lambda * (deficit_bits / 1e6).clamp(0.0, self.cap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub buffer: f64,
    pub seg_size_playing: f64,
    pub playback_pos: usize,
    pub download_ratio: f64,
    /// α-vectors for frames t, t−1, …, t−N_t, newest first, flattened.
    pub alpha_history: Vec<f64>,
    pub seg_index: usize,
    pub frame: i64,
    /// Cumulative delivered bits including segment 1.
    pub delivered: f64,
}

impl SessionState {
    /// Serving-cell gain of the current frame.
    pub fn alpha(&self) -> f64 {
        self.alpha_history[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdsState {
    pub buffer: f64,
    pub seg_size_next: f64,
    pub playback_pos: usize,
    pub download_ratio: f64,
    pub alpha_history: Vec<f64>,
    pub seg_index: usize,
    pub delivered: f64,
    /// The post-decision buffer misses the next deadline.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: SessionState,
    pub energy: f64,
    pub bits_delivered: f64,
    pub stalled: bool,
    pub done: bool,
    /// The trace ran out before the session finished (only after stalls).
    pub truncated: bool,
}

/// One streaming session over a fixed trace and video.
#[derive(Debug, Clone)]
pub struct StreamingEnv {
    pub trace: Arc<ChannelTrace>,
    pub video: VideoSpec,
    pub radio: RadioConfig,
    pub rate_bound: f64,
    pub penalty: Option<Penalty>,
    sigma2: f64,
}

impl StreamingEnv {
    pub fn new(
        trace: Arc<ChannelTrace>,
        video: VideoSpec,
        radio: RadioConfig,
        rate_bound: f64,
        penalty: Option<Penalty>,
    ) -> Result<Self> {
        if trace.horizon() < video.horizon() {
            return Err(Error::Config(format!(
                "trace has {} frames, session needs {}",
                trace.horizon(),
                video.horizon()
            )));
        }
        radio.validate()?;
        if !(rate_bound > 0.0) {
            return Err(Error::Config("rate_bound must be positive".into()));
        }
        let sigma2 = radio.sigma2();
        Ok(StreamingEnv { trace, video, radio, rate_bound, penalty, sigma2 })
    }

    pub fn link(&self, alpha: f64) -> LinkParams {
        LinkParams { alpha, sigma2: self.sigma2, bandwidth: self.radio.bandwidth_hz, p_max: self.radio.p_max() }
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    fn history_at(&self, t: i64) -> Vec<f64> {
        let nt = self.trace.history_len as i64;
        let mut h = Vec::with_capacity((nt as usize + 1) * self.trace.n_bs());
        for k in 0..=nt {
            h.extend_from_slice(self.trace.alpha_vec(t - k));
        }
        h
    }

    pub fn reset(&self) -> SessionState {
        let s1 = self.video.size(1);
        SessionState {
            buffer: s1,
            seg_size_playing: s1,
            playback_pos: 1,
            download_ratio: s1 / self.video.total_bits(),
            alpha_history: self.history_at(1),
            seg_index: 1,
            frame: 1,
            delivered: s1,
        }
    }

    /// Known part of the transition: buffer, next segment, playback and
    /// download progress after delivering ΔT·a bits in frame t.
    pub fn f_pds(&self, s: &SessionState, action: f64) -> PdsState {
        let lv = self.video.frames_per_segment;
        let finished = s.playback_pos == lv;
        let bits = self.video.dt * action;
        let buffer = s.buffer + bits - if finished { s.seg_size_playing } else { 0.0 };
        let seg_index = s.seg_index + finished as usize;
        let seg_size_next = self.video.size(seg_index);
        let stalled = seg_size_next > buffer + BIT_TOL;
        let playback_pos = s.playback_pos % lv + if stalled { 0 } else { 1 };
        let delivered = s.delivered + bits;
        PdsState {
            buffer,
            seg_size_next,
            playback_pos,
            download_ratio: s.download_ratio + bits / self.video.total_bits(),
            alpha_history: s.alpha_history.clone(),
            seg_index,
            delivered,
            stalled,
        }
    }

    /// ∂(B, S, l, η)/∂a of the post-decision state.
    pub fn f_pds_grad_action(&self) -> [f64; 4] {
        [self.video.dt, 0.0, 0.0, self.video.dt / self.video.total_bits()]
    }

    /// Least rate that keeps the next segment's deadline.
    pub fn min_safe_rate(&self, s: &SessionState) -> f64 {
        let lv = self.video.frames_per_segment;
        let finished = s.playback_pos == lv;
        let next = self.video.size(s.seg_index + finished as usize);
        let need = next - s.buffer + if finished { s.seg_size_playing } else { 0.0 };
        need.max(0.0) / self.video.dt
    }

    pub fn is_done(&self, s: &SessionState) -> bool {
        s.delivered >= self.video.total_bits() - BIT_TOL
    }

    fn check_action(&self, s: &SessionState, action: f64) -> Result<()> {
        let top = self.rate_bound.max(self.min_safe_rate(s));
        if !(action >= 0.0 && action <= top) {
            return Err(contract(format!("action {action} outside [0, {top}]")));
        }
        if self.is_done(s) {
            return Err(contract("step called on a finished session"));
        }
        Ok(())
    }

    fn finish(&self, s: &SessionState, pds: PdsState, energy: f64, bits: f64) -> StepOutcome {
        let penalty = match self.penalty {
            Some(p) => p.value(pds.seg_size_next - pds.buffer),
            None => 0.0,
        };
        let frame = s.frame + 1;
        let truncated_trace = frame as usize > self.trace.horizon();
        let mut next = SessionState {
            buffer: pds.buffer,
            seg_size_playing: pds.seg_size_next,
            playback_pos: pds.playback_pos,
            download_ratio: pds.download_ratio,
            alpha_history: Vec::new(),
            seg_index: pds.seg_index,
            frame,
            delivered: pds.delivered,
        };
        let done = self.is_done(&next);
        next.alpha_history = if truncated_trace { pds.alpha_history } else { self.history_at(frame) };
        StepOutcome {
            reward: -energy - penalty,
            next_state: next,
            energy,
            bits_delivered: bits,
            stalled: pds.stalled,
            done,
            truncated: truncated_trace && !done,
        }
    }

    /// Deterministic frame: bits = ΔT·a, energy = ΔT·p̄(α_t, a).
    pub fn step_idealized(&self, s: &SessionState, action: f64) -> Result<StepOutcome> {
        self.check_action(s, action)?;
        let energy = self.video.dt * expected_power(action, &self.link(s.alpha()))?;
        let pds = self.f_pds(s, action);
        Ok(self.finish(s, pds, energy, self.video.dt * action))
    }

    /// Frame with N_s Rayleigh slots under the water-filling policy for a.
    pub fn step_fading(&self, s: &SessionState, action: f64, rng: &mut SimRng) -> Result<StepOutcome> {
        self.check_action(s, action)?;
        let link = self.link(s.alpha());
        let (energy, bits) = frame_slots(&link, action, self.video.n_slots, self.video.tau, rng)?;
        let pds = self.f_pds(s, bits / self.video.dt);
        Ok(self.finish(s, pds, energy, bits))
    }

    /// A random mid-session state whose buffer holds the playing segment plus
    /// part of the next one. Used by cross-checks over many states.
    pub fn random_state(&self, rng: &mut SimRng) -> SessionState {
        let lv = self.video.frames_per_segment;
        let nv = self.video.n_segments();
        let seg_index = rng.random_range(1..nv);
        let playback_pos = rng.random_range(1..=lv);
        let t = ((seg_index - 1) * lv + playback_pos) as i64;
        let t = t.clamp(1, self.trace.horizon() as i64);
        let seg = self.video.size(seg_index);
        let before: f64 = self.video.segment_sizes[..seg_index].iter().sum();
        let room = 0.98 * (self.video.total_bits() - before);
        let ahead: f64 = (rng.random_range(0.0..1.5) * self.video.size(seg_index + 1)).min(room);
        let buffer = seg + ahead;
        let delivered = before + ahead;
        SessionState {
            buffer,
            seg_size_playing: seg,
            playback_pos,
            download_ratio: delivered / self.video.total_bits(),
            alpha_history: self.history_at(t),
            seg_index,
            frame: t,
            delivered,
        }
    }
}

/// Simulates one frame of `n_slots` Rayleigh slots at requested rate `rate`,
/// returning (energy J, bits).
pub fn frame_slots(link: &LinkParams, rate: f64, n_slots: usize, tau: f64, rng: &mut SimRng) -> Result<(f64, f64)> {
    if rate <= 0.0 {
        if rate < 0.0 {
            return Err(contract(format!("negative rate {rate}")));
        }
        return Ok((0.0, 0.0));
    }
    let xi = xi_from_rate_rayleigh(rate, link)?;
    let mut gains = vec![0.0; n_slots];
    fill_small_scale(rng, &mut gains);
    let (mut energy, mut bits) = (0.0, 0.0);
    for g in gains {
        let cg = link.alpha * g;
        let p = optimal_slot_power(cg, xi, link);
        if p > 0.0 {
            energy += tau * p;
            bits += tau * link.bandwidth * (cg * p / link.sigma2).ln_1p() / std::f64::consts::LN_2;
        }
    }
    Ok((energy, bits))
}

/// Checks the cumulative deadline form of the QoS constraint for a
/// stall-free schedule: by the end of frame m·L_v segments 2..=m+1 are in.
pub fn cumulative_deadlines_met(video: &VideoSpec, bits_per_frame: &[f64]) -> bool {
    let lv = video.frames_per_segment;
    let mut cum = 0.0;
    let mut need = 0.0;
    for (i, b) in bits_per_frame.iter().enumerate() {
        cum += b;
        let t = i + 1;
        if t % lv == 0 {
            let m = t / lv;
            need += video.size(m + 1);
            if cum + BIT_TOL < need {
                return false;
            }
        }
    }
    true
}
