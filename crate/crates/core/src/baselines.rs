//! Reference policies: the non-predictive constant-rate rule and the
//! offline optimum under perfect knowledge of the large-scale gains.
//!
//! The offline problem is
//!   min Σ_t ΔT·p̄(α_t, R_t)
//!   s.t. ΔT·Σ_{t ≤ m·L_v} R_t ≥ S_2 + … + S_{m+1},  m = 1 … N_v − 1,
//!        0 ≤ R_t ≤ rate_bound,
//! which is separable convex over a nested-prefix polyhedron.

use std::io::Write;

use crate::env::{cumulative_deadlines_met, RadioConfig, SessionState, StreamingEnv, VideoSpec, BIT_TOL};
use crate::error::{Error, Result};
use crate::mobility::ChannelTrace;
use crate::power_math::{marginal_power, power_curvature, rayleigh_unit_power, LinkParams};

pub const PLAN_CSV_VERSION: &str = "# streampower rate_plan v1";

/// Constant rate that downloads the next segment while the current one plays.
pub fn non_predictive_rate(state: &SessionState, video: &VideoSpec) -> f64 {
    video.size(state.seg_index + 1) / (video.frames_per_segment as f64 * video.dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePlan {
    /// R̄_t for frames 1..=T (bit/s).
    pub rates: Vec<f64>,
}

impl RatePlan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{PLAN_CSV_VERSION}")?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["frame", "rate_bps"])?;
        for (i, r) in self.rates.iter().enumerate() {
            out.write_record(&[(i + 1).to_string(), format!("{r:e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// The deadline data of the offline problem for one trace and video.
#[derive(Debug, Clone)]
pub struct OfflineProblem {
    pub dt: f64,
    pub frames_per_segment: usize,
    /// Cumulative bits due by the end of each block of L_v frames.
    pub demands: Vec<f64>,
    /// Per-frame links (α_t from the trace).
    pub links: Vec<LinkParams>,
    pub rate_bound: f64,
}

impl OfflineProblem {
    pub fn new(trace: &ChannelTrace, video: &VideoSpec, radio: &RadioConfig, rate_bound: f64) -> Result<Self> {
        let horizon = video.horizon();
        if trace.horizon() < horizon {
            return Err(Error::Config(format!("trace has {} frames, plan needs {horizon}", trace.horizon())));
        }
        let mut demands = Vec::with_capacity(video.n_segments() - 1);
        let mut cum = 0.0;
        for n in 2..=video.n_segments() {
            cum += video.size(n);
            demands.push(cum);
        }
        let links = (1..=horizon as i64).map(|t| radio.link(trace.alpha(t))).collect();
        let p = OfflineProblem { dt: video.dt, frames_per_segment: video.frames_per_segment, demands, links, rate_bound };
        p.check_feasible()?;
        Ok(p)
    }

    pub fn horizon(&self) -> usize {
        self.links.len()
    }

    fn check_feasible(&self) -> Result<()> {
        for (m, &d) in self.demands.iter().enumerate() {
            let cap = self.dt * self.rate_bound * ((m + 1) * self.frames_per_segment) as f64;
            if cap + BIT_TOL < d {
                return Err(Error::Infeasible(format!(
                    "deadline {} needs {d:.3e} bits but the rate bound allows {cap:.3e}",
                    m + 1
                )));
            }
        }
        Ok(())
    }

    pub fn energy(&self, rates: &[f64]) -> f64 {
        rates
            .iter()
            .zip(&self.links)
            .map(|(&r, l)| self.dt * l.noise_over_gain() * rayleigh_unit_power(r, l.bandwidth))
            .sum()
    }

    pub fn is_feasible(&self, rates: &[f64]) -> bool {
        let lv = self.frames_per_segment;
        let mut cum = 0.0;
        for (i, &r) in rates.iter().enumerate() {
            if !(r >= 0.0 && r <= self.rate_bound * (1.0 + 1e-12)) {
                return false;
            }
            cum += self.dt * r;
            if (i + 1) % lv == 0 && cum + BIT_TOL < self.demands[(i + 1) / lv - 1] {
                return false;
            }
        }
        true
    }

    /// The non-predictive plan, one constant rate per block.
    pub fn non_predictive_plan(&self) -> RatePlan {
        let lv = self.frames_per_segment;
        let mut prev = 0.0;
        let mut rates = Vec::with_capacity(self.horizon());
        for &d in &self.demands {
            let r = (d - prev) / (lv as f64 * self.dt);
            rates.extend(std::iter::repeat_n(r, lv));
            prev = d;
        }
        RatePlan { rates }
    }
}

/// Solves the nested-prefix level system shared by the projection and the
/// KKT conditions: frame t responds to a level ν through a nondecreasing
/// `respond(t, ν)`, levels are constant per block and nonincreasing over
/// blocks, and each block level is the least ν ≥ 0 that covers the tightest
/// remaining prefix demand. Returns per-frame values.
fn nested_levels<F: Fn(usize, f64) -> f64>(
    n_frames: usize,
    lv: usize,
    demands: &[f64],
    dt: f64,
    respond: F,
) -> Vec<f64> {
    let mut out = vec![0.0; n_frames];
    let mut done_bits = 0.0;
    let mut start_block = 0;
    let n_blocks = demands.len();
    let supply = |lo: usize, hi: usize, nu: f64| -> f64 { (lo * lv..hi * lv).map(|t| dt * respond(t, nu)).sum() };
    while start_block < n_blocks {
        let mut best_nu = 0.0;
        let mut best_m = n_blocks - 1;
        for m in start_block..n_blocks {
            let need = demands[m] - done_bits;
            let level = least_level(|nu| supply(start_block, m + 1, nu), need);
            if level >= best_nu {
                best_nu = level;
                best_m = m;
            }
        }
        for t in start_block * lv..(best_m + 1) * lv {
            out[t] = respond(t, best_nu);
        }
        done_bits += out[start_block * lv..(best_m + 1) * lv].iter().map(|r| dt * r).sum::<f64>();
        start_block = best_m + 1;
    }
    out
}

/// Least ν ≥ 0 with supply(ν) ≥ need, on the feasible side of a bisection.
fn least_level<F: Fn(f64) -> f64>(supply: F, need: f64) -> f64 {
    if supply(0.0) >= need {
        return 0.0;
    }
    let mut hi = 1.0;
    let mut lo = 0.0;
    let mut guard = 0;
    while supply(hi) < need {
        lo = hi;
        hi *= 4.0;
        guard += 1;
        if guard > 2000 {
            return hi;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if supply(mid) >= need {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Weighted projection onto the deadline polyhedron:
/// argmin Σ d_t (R_t − z_t)² over the feasible set.
pub fn project_deadlines(z: &[f64], d: &[f64], problem: &OfflineProblem) -> Vec<f64> {
    let u = problem.rate_bound;
    nested_levels(z.len(), problem.frames_per_segment, &problem.demands, problem.dt, |t, nu| {
        (z[t] + nu / d[t]).clamp(0.0, u)
    })
}

/// Numerical convexity check of p̄(·) on a rate grid via second differences.
/// p̄ scales with σ²/α, so one bandwidth-normalized check covers every frame.
pub fn power_is_convex(bandwidth: f64, rate_bound: f64) -> bool {
    let n = 2000;
    let h = rate_bound / n as f64;
    let f = |r: f64| rayleigh_unit_power(r, bandwidth);
    (1..n).all(|k| {
        let r = k as f64 * h;
        f(r + h) - 2.0 * f(r) + f(r - h) > 0.0
    })
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub plan: RatePlan,
    pub energy: f64,
    pub iterations: usize,
    pub used_dp_fallback: bool,
}

/// Minimum-energy plan by scaled projected gradient descent.
///
/// The metric is the diagonal of the Hessian, so each step is a projected
/// Newton step; backtracking keeps it monotone.
pub fn solve_offline_optimal(
    trace: &ChannelTrace,
    video: &VideoSpec,
    radio: &RadioConfig,
    rate_bound: f64,
) -> Result<SolveReport> {
    let problem = OfflineProblem::new(trace, video, radio, rate_bound)?;
    solve_problem(&problem)
}

pub fn solve_problem(problem: &OfflineProblem) -> Result<SolveReport> {
    if !power_is_convex(problem.links[0].bandwidth, problem.rate_bound) {
        let rates = dp_oracle(problem, 3)?;
        let energy = problem.energy(&rates);
        return Ok(SolveReport { plan: RatePlan { rates }, energy, iterations: 0, used_dp_fallback: true });
    }
    let n = problem.horizon();
    let dt = problem.dt;
    let mut r = problem.non_predictive_plan().rates;
    let mut f = problem.energy(&r);
    let floor = problem.rate_bound * 1e-6;
    let mut iterations = 0;
    for it in 0..1000 {
        iterations = it + 1;
        let g: Vec<f64> = (0..n).map(|t| dt * marginal_power(r[t], &problem.links[t])).collect();
        let d: Vec<f64> = (0..n).map(|t| dt * power_curvature(r[t].max(floor), &problem.links[t])).collect();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let z: Vec<f64> = (0..n).map(|t| r[t] - step * g[t] / d[t]).collect();
            let cand = project_deadlines(&z, &d, problem);
            let descent: f64 = (0..n).map(|t| g[t] * (cand[t] - r[t])).sum();
            let fc = problem.energy(&cand);
            if fc <= f + 0.25 * descent.min(0.0) {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let moved = cand.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let improvement = f - fc;
        r = cand;
        f = fc;
        if improvement <= 1e-14 * f.abs() || moved <= 1e-9 * problem.rate_bound {
            break;
        }
    }
    if !problem.is_feasible(&r) {
        return Err(Error::Numerical("projected gradient returned an infeasible plan".into()));
    }
    Ok(SolveReport { plan: RatePlan { rates: r }, energy: f, iterations, used_dp_fallback: false })
}

/// Offline optimum by dynamic programming over a cumulative-bits grid,
/// refined `levels` times around the previous best path.
pub fn dp_oracle(problem: &OfflineProblem, levels: usize) -> Result<Vec<f64>> {
    let n = problem.horizon();
    let lv = problem.frames_per_segment;
    let dt = problem.dt;
    let total = *problem.demands.last().expect("at least one deadline");
    let max_step = dt * problem.rate_bound;
    let cost = |t: usize, bits: f64| {
        let l = &problem.links[t];
        dt * l.noise_over_gain() * rayleigh_unit_power(bits / dt, l.bandwidth)
    };
    // required cumulative bits at the end of frame t
    let need: Vec<f64> = (1..=n).map(|t| if t % lv == 0 { problem.demands[t / lv - 1] } else { 0.0 }).collect();

    let coarse = 400usize;
    let mut delta = total / coarse as f64;
    // allowed cumulative values per frame (grid indices relative to an offset)
    let mut windows: Vec<(f64, usize)> = (0..n).map(|_| (0.0, coarse + 1)).collect();
    let mut path: Vec<f64> = Vec::new();
    for level in 0..levels.max(1) {
        if level > 0 {
            // keep ±3 cells of the previous grid around its best path
            let half = 3.0 * delta;
            delta /= 10.0;
            windows = path
                .iter()
                .map(|&y| {
                    let lo = (y - half).max(0.0);
                    let hi = (y + half).min(total);
                    (lo, ((hi - lo) / delta).ceil() as usize + 1)
                })
                .collect();
        }
        // value[t][k]: min cost for frames 1..=t ending at cumulative lo_t + k·δ
        let mut prev_vals: Vec<f64> = vec![0.0];
        let mut prev_grid: Vec<f64> = vec![0.0];
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(n);
        for t in 0..n {
            let (lo, count) = windows[t];
            let grid: Vec<f64> = (0..count).map(|k| (lo + k as f64 * delta).min(total)).collect();
            let mut vals = vec![f64::INFINITY; count];
            let mut arg = vec![usize::MAX; count];
            for (k, &y) in grid.iter().enumerate() {
                if y + BIT_TOL < need[t] {
                    continue;
                }
                for (j, &yp) in prev_grid.iter().enumerate() {
                    let v0 = prev_vals[j];
                    if !v0.is_finite() {
                        continue;
                    }
                    let step = y - yp;
                    if step < -1e-9 || step > max_step * (1.0 + 1e-12) {
                        continue;
                    }
                    let v = v0 + cost(t, step.max(0.0));
                    if v < vals[k] {
                        vals[k] = v;
                        arg[k] = j;
                    }
                }
            }
            back.push(arg);
            prev_vals = vals;
            prev_grid = grid;
        }
        let (mut k, best) = prev_vals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (k, *v))
            .expect("nonempty grid");
        if !best.is_finite() {
            return Err(Error::Infeasible("no grid path meets every deadline".into()));
        }
        let mut cum = vec![0.0; n];
        for t in (0..n).rev() {
            let (lo, _) = windows[t];
            cum[t] = (lo + k as f64 * delta).min(total);
            k = back[t][k];
        }
        path = cum;
    }
    let mut rates = Vec::with_capacity(n);
    let mut prev = 0.0;
    for &y in &path {
        rates.push(((y - prev) / dt).max(0.0));
        prev = y;
    }
    Ok(rates)
}

/// Per-frame rates of the non-predictive rule when run through the env, and
/// the resulting episode energy under idealized dynamics.
pub fn run_non_predictive(env: &StreamingEnv) -> Result<(Vec<f64>, f64)> {
    let mut s = env.reset();
    let mut rates = Vec::new();
    let mut energy = 0.0;
    while !env.is_done(&s) {
        let a = non_predictive_rate(&s, &env.video).min(env.rate_bound);
        let out = env.step_idealized(&s, a)?;
        rates.push(a);
        energy += out.energy;
        s = out.next_state;
        if out.truncated {
            break;
        }
    }
    let bits: Vec<f64> = rates.iter().map(|r| r * env.video.dt).collect();
    debug_assert!(cumulative_deadlines_met(&env.video, &bits));
    Ok((rates, energy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_level_is_feasible_side() {
        let nu = least_level(|x| 3.0 * x, 7.0);
        assert!(3.0 * nu >= 7.0 && (nu - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(least_level(|x| x + 5.0, 2.0), 0.0);
    }

    #[test]
    fn convexity_holds_at_default_bandwidth() {
        assert!(power_is_convex(20e6, 80e6));
    }
}
