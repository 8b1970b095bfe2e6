//! Per-frame power control kernels.
//!
//! Within a frame the large-scale gain α is fixed and the small-scale gain g
//! fluctuates slot by slot. For a requested average rate R̄ the
//! energy-minimizing slot policy is water-filling with level ξ; these
//! functions map R̄ to ξ and to the expected transmit power p̄(α, R̄).
//!
//! The Rayleigh closed forms assume P_max never binds. The quadrature path
//! ([`GeneralPowerModel`]) handles a finite P_max and an arbitrary fading
//! density, and is what the closed forms are checked against.

pub(crate) mod e1;
pub mod quadrature;

pub use e1::{exp_integral_e1, exp_integral_e1_inv, EULER_GAMMA};
pub(crate) use e1::{e1_inv_unchecked, e1_scaled_unchecked};

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use quadrature::{integrate, integrate_exp_weighted, integrate_to_infinity};

const QUAD_ABS_TOL: f64 = 1e-300;
const QUAD_REL_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Large-scale channel gain (linear).
    pub alpha: f64,
    /// Noise power (W).
    pub sigma2: f64,
    /// Bandwidth (Hz).
    pub bandwidth: f64,
    /// Maximum transmit power (W).
    pub p_max: f64,
}

impl LinkParams {
    pub fn new(alpha: f64, sigma2: f64, bandwidth: f64, p_max: f64) -> Result<Self> {
        let link = LinkParams { alpha, sigma2, bandwidth, p_max };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.alpha) && ok(self.sigma2) && ok(self.bandwidth)) || !(self.p_max > 0.0) {
            return Err(domain(format!("link parameters must be strictly positive: {self:?}")));
        }
        Ok(())
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        LinkParams { alpha, ..*self }
    }

    /// σ²/α, the power scale of every closed form below.
    pub fn noise_over_gain(&self) -> f64 {
        self.sigma2 / self.alpha
    }
}

/// Water level ξ of the slot policy, in watts. Always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct WaterLevel(f64);

impl WaterLevel {
    pub fn new(xi: f64) -> Result<Self> {
        if xi > 0.0 && !xi.is_nan() {
            Ok(WaterLevel(xi))
        } else {
            Err(domain(format!("water level must be positive, got {xi}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Three-branch water-filling power for instantaneous gain α·g.
///
/// 0 below σ²/ξ, ξ − σ²/(αg) in the middle band, P_max once αg reaches
/// σ²/(ξ − P_max) (only possible when ξ > P_max).
pub fn optimal_slot_power(channel_gain: f64, xi: WaterLevel, link: &LinkParams) -> f64 {
    let xi = xi.0;
    if channel_gain * xi <= link.sigma2 {
        return 0.0;
    }
    (xi - link.sigma2 / channel_gain).min(link.p_max)
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("rate must be finite and positive, got {rate}")))
    }
}

/// Normalized threshold x = E₁⁻¹(R̄ ln2 / W); the slot policy is silent for g ≤ x.
/// Independent of α. Returns +∞ for R̄ = 0.
pub fn rayleigh_threshold(rate: f64, bandwidth: f64) -> f64 {
    let y = rate * LN_2 / bandwidth;
    if y <= 0.0 {
        return f64::INFINITY;
    }
    e1_inv_unchecked(y)
}

/// ξ = (σ²/α)·[E₁⁻¹(R̄ ln2 / W)]⁻¹ for Rayleigh fading with non-binding P_max.
pub fn xi_from_rate_rayleigh(rate: f64, link: &LinkParams) -> Result<WaterLevel> {
    check_rate(rate)?;
    let x = rayleigh_threshold(rate, link.bandwidth);
    WaterLevel::new(link.noise_over_gain() / x)
}

/// p̄ / (σ²/α) as a function of the threshold x and y = R̄ ln2 / W.
fn unit_power_at(x: f64, y: f64) -> f64 {
    if !x.is_finite() {
        return 0.0;
    }
    if x < 1.0 {
        (-x).exp() / x - y
    } else {
        // e^{-x}(1/x - e^x E1(x)), avoids the cancellation of two tiny terms
        ((-x).exp() * (1.0 / x - e1_scaled_unchecked(x))).max(0.0)
    }
}

/// Expected power per unit σ²/α at rate R̄; α-independent.
pub fn rayleigh_unit_power(rate: f64, bandwidth: f64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    let y = rate * LN_2 / bandwidth;
    unit_power_at(e1_inv_unchecked(y), y)
}

/// Expected transmit power p̄(α, R̄) under the optimal slot policy
/// (Rayleigh, non-binding P_max): (σ²/α)[e^(−x)/x − R̄ ln2/W].
pub fn expected_power(rate: f64, link: &LinkParams) -> Result<f64> {
    if rate < 0.0 || !rate.is_finite() {
        return Err(domain(format!("rate must be finite and nonnegative, got {rate}")));
    }
    Ok(link.noise_over_gain() * rayleigh_unit_power(rate, link.bandwidth))
}

/// dp̄/dR̄ of the Rayleigh closed form. Simplifies to ξ^opt(R̄)·ln2/W.
pub fn expected_power_grad(rate: f64, link: &LinkParams) -> Result<f64> {
    check_rate(rate)?;
    Ok(marginal_power(rate, link))
}

/// dp̄/dR̄ extended continuously to R̄ = 0 (where it vanishes).
pub fn marginal_power(rate: f64, link: &LinkParams) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    let x = rayleigh_threshold(rate, link.bandwidth);
    link.noise_over_gain() * LN_2 / (link.bandwidth * x)
}

/// d²p̄/dR̄² of the Rayleigh closed form: (σ²/α)(ln2/W)²·e^x/x.
pub fn power_curvature(rate: f64, link: &LinkParams) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let x = rayleigh_threshold(rate, link.bandwidth);
    let k = LN_2 / link.bandwidth;
    link.noise_over_gain() * k * k * x.exp() / x
}

/// Density of the small-scale power gain g.
pub trait FadingDensity {
    fn pdf(&self, g: f64) -> f64;

    /// ∫ₐ^∞ f(g)·ρ(g) dg.
    fn integrate_tail(&self, f: &dyn Fn(f64) -> f64, a: f64) -> f64 {
        integrate_to_infinity(|g| f(g) * self.pdf(g), a, QUAD_ABS_TOL, QUAD_REL_TOL).value
    }

    /// ∫ₐᵇ f(g)·ρ(g) dg.
    fn integrate_band(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        integrate(|g| f(g) * self.pdf(g), a, b, QUAD_ABS_TOL, QUAD_REL_TOL).value
    }
}

/// Unit-mean exponential power gain, ρ(g) = e^(−g).
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayleigh;

impl FadingDensity for Rayleigh {
    fn pdf(&self, g: f64) -> f64 {
        if g < 0.0 {
            0.0
        } else {
            (-g).exp()
        }
    }

    fn integrate_tail(&self, f: &dyn Fn(f64) -> f64, a: f64) -> f64 {
        integrate_exp_weighted(f, a, QUAD_ABS_TOL, QUAD_REL_TOL).value
    }
}

/// Quadrature-backed power model for a finite P_max and any fading density.
///
/// The feasibility ceiling (average rate at p ≡ P_max) is computed once at
/// construction.
#[derive(Debug, Clone)]
pub struct GeneralPowerModel<D: FadingDensity> {
    link: LinkParams,
    density: D,
    rate_ceiling: f64,
}

impl<D: FadingDensity> GeneralPowerModel<D> {
    pub fn new(link: LinkParams, density: D) -> Result<Self> {
        link.validate()?;
        let snr = link.alpha * link.p_max / link.sigma2;
        let bw = link.bandwidth;
        let rate_ceiling = density.integrate_tail(&|g: f64| bw * (snr * g).ln_1p() / LN_2, 0.0);
        Ok(GeneralPowerModel { link, density, rate_ceiling })
    }

    pub fn link(&self) -> &LinkParams {
        &self.link
    }

    pub fn rate_ceiling(&self) -> f64 {
        self.rate_ceiling
    }

    /// Lower and (when ξ > P_max) upper small-scale thresholds of the policy.
    fn thresholds(&self, xi: f64) -> (f64, Option<f64>) {
        let s = self.link.noise_over_gain();
        let lower = s / xi;
        let upper = if xi > self.link.p_max { Some(s / (xi - self.link.p_max)) } else { None };
        (lower, upper)
    }

    /// Average rate delivered by the water-filling policy at level ξ.
    pub fn expected_rate(&self, xi: WaterLevel) -> f64 {
        let (g0, g1) = self.thresholds(xi.0);
        let bw = self.link.bandwidth;
        let band = |g: f64| bw * (g / g0).ln() / LN_2;
        match g1 {
            None => self.density.integrate_tail(&band, g0),
            Some(g1) => {
                let snr = self.link.alpha * self.link.p_max / self.link.sigma2;
                let capped = |g: f64| bw * (snr * g).ln_1p() / LN_2;
                self.density.integrate_band(&band, g0, g1) + self.density.integrate_tail(&capped, g1)
            }
        }
    }

    /// Average power spent by the water-filling policy at level ξ.
    pub fn expected_power_at(&self, xi: WaterLevel) -> f64 {
        let (g0, g1) = self.thresholds(xi.0);
        let s = self.link.noise_over_gain();
        let xi = xi.0;
        let band = |g: f64| xi - s / g;
        match g1 {
            None => self.density.integrate_tail(&band, g0),
            Some(g1) => {
                let p_max = self.link.p_max;
                self.density.integrate_band(&band, g0, g1)
                    + self.density.integrate_tail(&|_g: f64| p_max, g1)
            }
        }
    }

    /// Solves the average-rate equation for ξ by bisection in ln ξ.
    pub fn xi_from_rate(&self, rate: f64) -> Result<WaterLevel> {
        check_rate(rate)?;
        if rate >= self.rate_ceiling {
            return Err(Error::InfeasibleRate { rate, ceiling: self.rate_ceiling });
        }
        let guess = xi_from_rate_rayleigh(rate, &self.link)?.0;
        let rate_at = |ln_xi: f64| self.expected_rate(WaterLevel(ln_xi.exp()));
        let (mut lo, mut hi) = (guess.ln(), guess.ln());
        let mut step = 0.25;
        while rate_at(lo) > rate {
            lo -= step;
            step *= 2.0;
        }
        step = 0.25;
        while rate_at(hi) < rate {
            hi += step;
            step *= 2.0;
            if hi > 700.0 {
                return Err(Error::InfeasibleRate { rate, ceiling: self.rate_ceiling });
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let r = rate_at(mid);
            if ((r - rate) / rate).abs() <= 1e-12 || hi - lo < 1e-15 {
                return WaterLevel::new(mid.exp());
            }
            if r < rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        WaterLevel::new((0.5 * (lo + hi)).exp())
    }

    pub fn expected_power(&self, rate: f64) -> Result<f64> {
        if rate == 0.0 {
            return Ok(0.0);
        }
        let xi = self.xi_from_rate(rate)?;
        Ok(self.expected_power_at(xi))
    }
}

/// ξ for a general fading density and finite P_max via bisection on the
/// average-rate equation.
pub fn xi_from_rate_general<D: FadingDensity>(rate: f64, link: &LinkParams, density: D) -> Result<WaterLevel> {
    GeneralPowerModel::new(*link, density)?.xi_from_rate(rate)
}

/// Average rate at level ξ by quadrature (Rayleigh, finite P_max respected).
pub fn expected_rate_quadrature(xi: WaterLevel, link: &LinkParams) -> Result<f64> {
    Ok(GeneralPowerModel::new(*link, Rayleigh)?.expected_rate(xi))
}
