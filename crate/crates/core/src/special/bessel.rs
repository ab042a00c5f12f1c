//! Modified Bessel functions from their integral representations
//!
//!   K_nu(y) = int_0^inf exp(-y cosh t) cosh(nu t) dt
//!   I_nu(y) = (1/pi) int_0^pi exp(y cos th) cos(nu th) dth
//!             - (sin(nu pi)/pi) int_0^inf exp(-y cosh t - nu t) dt
//!
//! evaluated in exponentially scaled form so that large arguments neither
//! overflow nor underflow.

use crate::error::{LabError, Result};
use crate::quadrature::{integrate_points, truncation_point, QuadratureConfig};
use std::f64::consts::PI;

/// Smallest argument accepted by the public entry points.
pub const MIN_ARGUMENT: f64 = 0.05;

fn check_argument(what: &'static str, y: f64) -> Result<()> {
    if !(y >= MIN_ARGUMENT) || !y.is_finite() {
        return Err(LabError::OutOfRange { what, value: y });
    }
    Ok(())
}

/// int_0^inf exp(-y (cosh t - 1)) h(t) dt where |h(t)| <= c exp(g t).
/// The range is cut at T solved from the bound, and the dropped tail
/// exp(bound(T)) / (y sinh T - g) is checked against the tolerance.
fn cosh_weighted_integral<H: Fn(f64) -> f64>(y: f64, g: f64, h: H, cfg: &QuadratureConfig) -> Result<f64> {
    let log_bound = |t: f64| -2.0 * y * (0.5 * t).sinh().powi(2) + g * t;
    let t_peak = if g > 0.0 { (g / y).asinh() } else { 0.0 };
    let peak = log_bound(t_peak);
    let mut drop = cfg.tail_log_drop;
    let mut t_end = truncation_point(log_bound, t_peak, 0.25, peak, drop)?;
    loop {
        let rate = y * t_end.sinh() - g;
        let tail = log_bound(t_end).exp() / rate.max(f64::MIN_POSITIVE);
        if rate > 0.0 && tail <= cfg.tail_factor() * peak.exp() {
            break;
        }
        drop += 5.0;
        t_end = truncation_point(log_bound, t_end, 0.25, peak, drop)?;
    }
    let f = |t: f64| (-2.0 * y * (0.5 * t).sinh().powi(2)).exp() * h(t);
    let mut pts = vec![0.0];
    if t_peak > 0.0 && t_peak < t_end {
        pts.push(t_peak);
    }
    pts.push(t_end);
    Ok(integrate_points(f, &pts, cfg)?.value)
}

/// Upper limit of the angular integral after which the integrand
/// exp(-2y sin^2(th/2)) is below exp(-drop).
fn angular_cut(y: f64, drop: f64) -> f64 {
    let s = (drop / (2.0 * y)).sqrt();
    if s >= 1.0 {
        PI
    } else {
        2.0 * s.asin()
    }
}

fn angular_integral<H: Fn(f64) -> f64>(y: f64, h: H, cfg: &QuadratureConfig) -> Result<f64> {
    let cut = angular_cut(y, cfg.tail_log_drop);
    let f = |th: f64| (-2.0 * y * (0.5 * th).sin().powi(2)).exp() * h(th);
    let mid = (cut * 0.25).min(4.0 / y.sqrt());
    let pts: Vec<f64> = if mid > 0.0 && mid < cut { vec![0.0, mid, cut] } else { vec![0.0, cut] };
    Ok(integrate_points(f, &pts, cfg)?.value)
}

/// exp(y) K_nu(y) without the argument check.
pub(crate) fn k_scaled_raw(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let a = nu.abs();
    cosh_weighted_integral(y, a, |t| (a * t).cosh(), cfg)
}

/// exp(-y) I_nu(y) without the argument check; valid for y > 0.
pub(crate) fn i_scaled_raw(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let first = angular_integral(y, |th| (nu * th).cos(), cfg)? / PI;
    let s = (nu * PI).sin();
    if s == 0.0 || nu == nu.round() {
        return Ok(first);
    }
    let g = (-nu).max(0.0);
    // the second term carries exp(-2y) relative to the first
    let log_scale = -2.0 * y + if g > 0.0 { g * (g / y).asinh() } else { 0.0 };
    if log_scale < first.abs().max(f64::MIN_POSITIVE).ln() - cfg.tail_log_drop {
        return Ok(first);
    }
    let second = cosh_weighted_integral(y, g, |t| (-nu * t).exp(), cfg)?;
    Ok(first - s / PI * (-2.0 * y).exp() * second)
}

/// exp(-y) I'_nu(y) from the differentiated representation.
pub(crate) fn i_prime_scaled_raw(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let first = angular_integral(y, |th| ((nu + 1.0) * th).cos() + ((nu - 1.0) * th).cos(), cfg)? / (2.0 * PI);
    let s = (nu * PI).sin();
    if s == 0.0 || nu == nu.round() {
        return Ok(first);
    }
    let g = (1.0 - nu).max(0.0);
    let log_scale = -2.0 * y + if g > 0.0 { g * (g / y).asinh() } else { 0.0 };
    if log_scale < first.abs().max(f64::MIN_POSITIVE).ln() - cfg.tail_log_drop {
        return Ok(first);
    }
    let second = cosh_weighted_integral(y, g, |t| (-(nu + 1.0) * t).exp() + (-(nu - 1.0) * t).exp(), cfg)?;
    Ok(first + s / (2.0 * PI) * (-2.0 * y).exp() * second)
}

/// exp(y) K_nu(y).
pub fn bessel_k_scaled(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_argument("bessel_K", y)?;
    k_scaled_raw(nu, y, cfg)
}

/// K_nu(y).
pub fn bessel_k(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(bessel_k_scaled(nu, y, cfg)? * (-y).exp())
}

/// ln K_nu(y), finite for arguments where K_nu underflows.
pub fn ln_bessel_k(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(bessel_k_scaled(nu, y, cfg)?.ln() - y)
}

fn check_order_i(nu: f64) -> Result<()> {
    if !(nu > -1.0) || !nu.is_finite() {
        return Err(LabError::InvalidParameter(format!("bessel_I requires order > -1, got {nu}")));
    }
    Ok(())
}

/// exp(-y) I_nu(y) for nu > -1.
pub fn bessel_i_scaled(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_order_i(nu)?;
    check_argument("bessel_I", y)?;
    i_scaled_raw(nu, y, cfg)
}

/// I_nu(y) for nu > -1.
pub fn bessel_i(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(bessel_i_scaled(nu, y, cfg)? * y.exp())
}

/// ln I_nu(y).
pub fn ln_bessel_i(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(bessel_i_scaled(nu, y, cfg)?.ln() + y)
}

/// exp(y) K'_nu(y) = -(exp(y) K_{nu+1}(y) + exp(y) K_{nu-1}(y)) / 2.
pub fn bessel_k_prime_scaled(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_argument("bessel_K'", y)?;
    Ok(-0.5 * (k_scaled_raw(nu + 1.0, y, cfg)? + k_scaled_raw(nu - 1.0, y, cfg)?))
}

/// K'_nu(y).
pub fn bessel_k_prime(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(bessel_k_prime_scaled(nu, y, cfg)? * (-y).exp())
}

/// K'_{1/n}(y) = -(K_{(n+1)/n}(y) + K_{(n-1)/n}(y)) / 2.
pub fn bessel_k_prime_over_n(n: u32, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if n < 2 {
        return Err(LabError::InvalidParameter(format!("n must be at least 2, got {n}")));
    }
    let nf = n as f64;
    check_argument("bessel_K'", y)?;
    let s = k_scaled_raw((nf + 1.0) / nf, y, cfg)? + k_scaled_raw((nf - 1.0) / nf, y, cfg)?;
    Ok(-0.5 * s * (-y).exp())
}

/// exp(-y) I'_nu(y) for nu > -1.
pub fn bessel_i_prime_scaled(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_order_i(nu)?;
    check_argument("bessel_I'", y)?;
    i_prime_scaled_raw(nu, y, cfg)
}

/// I'_nu(y) for nu > -1.
pub fn bessel_i_prime(nu: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(bessel_i_prime_scaled(nu, y, cfg)? * y.exp())
}
