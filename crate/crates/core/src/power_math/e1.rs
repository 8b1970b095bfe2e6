//! Exponential integral E₁ and its inverse.
//!
//! E₁(x) = ∫ₓ^∞ e^(−t)/t dt. The power series is used below x = 1 and the
//! Lentz continued fraction above it, which keeps the relative error near
//! machine precision over the whole positive axis.

use crate::error::{domain, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;
const MAX_ITER: usize = 500;

/// e^x · E₁(x) by the continued fraction, valid for x ≥ 1.
fn scaled_cf(x: f64) -> f64 {
    let mut b = x + 1.0;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

fn series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..MAX_ITER {
        let kf = k as f64;
        term *= -x / kf;
        let contrib = term / kf;
        sum += contrib;
        if contrib.abs() < EPS * sum.abs().max(1e-300) {
            break;
        }
    }
    -EULER_GAMMA - x.ln() - sum
}

/// e^x · E₁(x) for any x > 0 (no domain check).
pub(crate) fn e1_scaled_unchecked(x: f64) -> f64 {
    if x < 1.0 {
        x.exp() * series(x)
    } else {
        scaled_cf(x)
    }
}

/// ln E₁(x) for any x > 0 (no domain check). Stays finite where E₁ underflows.
pub(crate) fn ln_e1_unchecked(x: f64) -> f64 {
    if x < 1.0 {
        series(x).ln()
    } else {
        -x + scaled_cf(x).ln()
    }
}

pub(crate) fn e1_unchecked(x: f64) -> f64 {
    if x < 1.0 {
        series(x)
    } else {
        (-x).exp() * scaled_cf(x)
    }
}

pub fn exp_integral_e1(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("E1 requires a finite x > 0, got {x}")));
    }
    Ok(e1_unchecked(x))
}

/// Solves E₁(x) = y for x.
///
/// Bracketed Newton in u = ln x on ln E₁, falling back to bisection whenever
/// a Newton step leaves the bracket. The starting point comes from the
/// small-x (−γ − ln x) or large-x (e^(−x)/x) asymptote.
pub fn exp_integral_e1_inv(y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(domain(format!("E1 inverse requires a finite y > 0, got {y}")));
    }
    Ok(e1_inv_unchecked(y))
}

pub(crate) fn e1_inv_unchecked(y: f64) -> f64 {
    let target = y.ln();
    let x0 = if y >= 0.5 {
        (-EULER_GAMMA - y).exp()
    } else {
        let l = -target;
        if l > 1.0 {
            l - l.ln()
        } else {
            0.5
        }
    };
    // phi(u) = ln E1(e^u) - ln y, strictly decreasing in u.
    let phi = |u: f64| ln_e1_unchecked(u.exp()) - target;

    let mut u = x0.ln();
    let mut f = phi(u);
    if f == 0.0 {
        return x0;
    }
    let (mut lo, mut hi) = (u, u);
    let mut step = 0.5;
    if f > 0.0 {
        // root lies at larger u
        loop {
            hi += step;
            step *= 2.0;
            if phi(hi) < 0.0 {
                break;
            }
            lo = hi;
        }
    } else {
        loop {
            lo -= step;
            step *= 2.0;
            if phi(lo) > 0.0 {
                break;
            }
            hi = lo;
        }
    }

    for _ in 0..200 {
        let x = u.exp();
        let slope = -1.0 / e1_scaled_unchecked(x);
        let mut next = u - f / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let delta = (next - u).abs();
        u = next;
        f = phi(u);
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        if delta < 1e-15 * u.abs().max(1.0) || hi - lo < 1e-15 {
            break;
        }
    }
    u.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        // Reference values (mpmath, 30 digits).
        let cases = [
            (1e-8, 17.84346508905083259),
            (0.5, 0.5597735947761608118),
            (1.0, 0.2193839343955202737),
            (2.0, 0.04890051070806111957),
            (10.0, 4.156968929685324277e-6),
            (50.0, 3.783264029550459520e-24),
        ];
        for (x, want) in cases {
            let got = exp_integral_e1(x).unwrap();
            assert!(
                ((got - want) / want).abs() < 1e-13,
                "E1({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(exp_integral_e1(0.0).is_err());
        assert!(exp_integral_e1(-1.0).is_err());
        assert!(exp_integral_e1_inv(0.0).is_err());
        assert!(exp_integral_e1_inv(-3.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        let x = exp_integral_e1_inv(0.219383934).unwrap();
        assert!((x - 1.0).abs() < 1e-8);
        // 8 Mbps over 20 MHz: y = R ln2 / W = 0.27726
        let x = exp_integral_e1_inv(0.27726).unwrap();
        assert!((x - 0.863642127026925).abs() < 1e-10, "{x}");
    }

    #[test]
    fn inverse_extremes() {
        for y in [1e-300, 1e-100, 1e-12, 3.0, 30.0, 300.0] {
            let x = exp_integral_e1_inv(y).unwrap();
            let back = ln_e1_unchecked(x);
            assert!((back - y.ln()).abs() < 1e-11 * y.ln().abs().max(1.0), "y={y} x={x}");
        }
    }
}
