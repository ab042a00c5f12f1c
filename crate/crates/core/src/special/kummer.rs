//! The confluent hypergeometric pair behind the nonzero-mode solutions:
//!
//!   Psi_flat(b, a, y) = e^y / Gamma(a-b) int_0^inf e^{ys} s^{a-b-1} (1+s)^{b-1} ds
//!   Phi_sharp(b, a, y) = Gamma(a)/Gamma(a-b) e^y (-y)^{b-a}
//!                        int_0^inf e^{s/y} s^{(a-1)/2-b} I_{a-1}(2 sqrt s) ds
//!
//! for y <= -1. With x = -y, s = sigma/x in the first and s = r^2 in the
//! second, both become peak-scaled integrals that are evaluated in log form:
//!
//!   Psi_flat  = e^{-x} x^{-(a-b)} / Gamma(a-b) int e^{-sigma} sigma^{a-b-1} (1+sigma/x)^{b-1}
//!   Phi_sharp = Gamma(a)/Gamma(a-b) x^{b-a} 2 int e^{-(r-x)^2/x} r^{a-2b} Itilde_{a-1}(2r) dr
//!
//! where Itilde = e^{-y} I is the scaled Bessel function.

use super::bessel::i_scaled_raw;
use super::gamma::ln_gamma;
use crate::error::{LabError, Result};
use crate::quadrature::{integrate_points_vec, truncation_point, QuadratureConfig};
use serde::{Deserialize, Serialize};

/// Parameters of the Kummer pair for the mode (lambda, j) in dimension n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KummerParams {
    pub n: u32,
    pub alpha: f64,
    pub beta: f64,
    pub q: f64,
    pub gamma_n: f64,
}

impl KummerParams {
    /// alpha = 1 - 1/n, beta = (n-1)/(2n) - lambda/(n j).
    pub fn new(n: u32, lambda: f64, j: u32) -> Result<Self> {
        if n < 2 {
            return Err(LabError::InvalidParameter(format!("n must be at least 2, got {n}")));
        }
        if j == 0 {
            return Err(LabError::InvalidParameter("Kummer parameters need j >= 1".into()));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(LabError::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let nf = n as f64;
        let beta = (nf - 1.0) / (2.0 * nf) - lambda / (nf * j as f64);
        Self::from_beta(n, beta)
    }

    /// Parameters for an arbitrary beta with alpha fixed by n.
    pub fn from_beta(n: u32, beta: f64) -> Result<Self> {
        if n < 2 {
            return Err(LabError::InvalidParameter(format!("n must be at least 2, got {n}")));
        }
        let nf = n as f64;
        let alpha = 1.0 - 1.0 / nf;
        if !(alpha - beta > 0.0) {
            return Err(LabError::InvalidParameter(format!("need alpha - beta > 0, got beta = {beta}")));
        }
        Ok(KummerParams {
            n,
            alpha,
            beta,
            q: alpha - beta - 1.0,
            gamma_n: 0.5 + 1.0 / nf,
        })
    }

    /// a = alpha - beta, the Gamma-function argument of both prefactors.
    pub fn a(&self) -> f64 {
        self.alpha - self.beta
    }

    /// Exponent of r in the Phi_sharp integrand, alpha - 2 beta.
    pub fn kappa(&self) -> f64 {
        self.alpha - 2.0 * self.beta
    }
}

/// A positive quantity in log form with its logarithmic derivative in x = -y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEval {
    pub ln_value: f64,
    pub d_ln_dx: f64,
}

fn check_y(y: f64) -> Result<f64> {
    if !(y <= -1.0) || !y.is_finite() {
        return Err(LabError::OutOfRange { what: "Kummer argument (need y <= -1)", value: y });
    }
    Ok(-y)
}

/// ln Psi_flat(beta, alpha, y) and d/dx of it at x = -y.
pub fn ln_psi_flat(p: &KummerParams, y: f64, cfg: &QuadratureConfig) -> Result<LogEval> {
    let x = check_y(y)?;
    ln_psi_flat_at(p, x, cfg)
}

pub(crate) fn ln_psi_flat_at(p: &KummerParams, x: f64, cfg: &QuadratureConfig) -> Result<LogEval> {
    let a = p.a();
    let b1 = p.beta - 1.0;
    let g = |s: f64| -s + (a - 1.0) * s.ln() + b1 * (s / x).ln_1p();
    let s_peak = (a - 1.0).max(1.0);
    let peak = g(s_peak);
    let t_end = truncation_point(g, s_peak, 1.0 + a.sqrt(), peak, cfg.tail_log_drop)?;
    // [0, 1] in rho = sigma^a removes the sigma^{a-1} endpoint behaviour
    let low = integrate_points_vec(
        |rho: f64| {
            let s = rho.powf(1.0 / a);
            let w = (-s + b1 * (s / x).ln_1p() - peak).exp() / a;
            [w, w * s]
        },
        &[0.0, 1.0],
        cfg,
    )?;
    let mut pts = vec![1.0];
    if s_peak > 1.0 {
        pts.push(s_peak);
    }
    pts.push(t_end.max(2.0));
    let high = integrate_points_vec(
        |s: f64| {
            let w = (g(s) - peak).exp();
            [w, w * s]
        },
        &pts,
        cfg,
    )?;
    let j0 = low[0].value + high[0].value;
    let j1 = low[1].value + high[1].value;
    let ln_value = -x - ln_gamma(a)? - a * x.ln() + peak + j0.ln();
    Ok(LogEval { ln_value, d_ln_dx: -1.0 - j1 / (j0 * x) })
}

/// Psi_flat(beta, alpha, y) for y <= -1.
pub fn psi_flat(p: &KummerParams, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(ln_psi_flat(p, y, cfg)?.ln_value.exp())
}

/// ln Phi_sharp(beta, alpha, y) and d/dx of it at x = -y.
pub fn ln_phi_sharp(p: &KummerParams, y: f64, cfg: &QuadratureConfig) -> Result<LogEval> {
    let x = check_y(y)?;
    ln_phi_sharp_at(p, x, cfg)
}

pub(crate) fn ln_phi_sharp_at(p: &KummerParams, x: f64, cfg: &QuadratureConfig) -> Result<LogEval> {
    let a = p.a();
    let nu = p.alpha - 1.0;
    let kappa = p.kappa();
    let e = kappa + nu;
    let itilde = |r: f64| i_scaled_raw(nu, 2.0 * r, cfg);
    let gauss = |r: f64| -(r - x) * (r - x) / x;
    // the scaled Bessel factor is below one for arguments >= 2
    let bound = |r: f64| gauss(r) + kappa * r.ln();
    let disc = x * x + 2.0 * (kappa - 0.5) * x;
    let r_peak = (0.5 * (x + disc.max(0.0).sqrt())).max(1.0);
    let peak = bound(r_peak) + itilde(r_peak)?.ln();
    let drop = cfg.tail_log_drop + 2.0;
    let width = x.sqrt();
    let t_end = truncation_point(bound, r_peak, width, peak, drop)?;

    let mut first_pair = [0.0f64; 2];
    // [0, 1]: r = rho^{1/(1+e)} absorbs the r^{kappa+nu} endpoint behaviour;
    // its integrand is at most exp(-(1-x)^2/x) times an O(1) constant
    let low_negligible = x > 2.0 && gauss(1.0) + 3.0 - (1.0 + e).ln() < peak - drop;
    if !low_negligible {
        let mut err = None;
        let low = integrate_points_vec(
            |rho: f64| {
                if rho <= 0.0 {
                    return [0.0, 0.0];
                }
                let r = rho.powf(1.0 / (1.0 + e));
                match itilde(r) {
                    Ok(it) => {
                        let w = (gauss(r) - peak).exp() * r.powf(-nu) * it / (1.0 + e);
                        [w, w * r * r]
                    }
                    Err(er) => {
                        err.get_or_insert(er);
                        [0.0, 0.0]
                    }
                }
            },
            &[0.0, 1.0],
            cfg,
        )?;
        if let Some(er) = err {
            return Err(er);
        }
        first_pair = [low[0].value, low[1].value];
    }
    let r_start = if low_negligible {
        // first r >= 1 where the bound comes within `drop` of the peak
        let (mut lo, mut hi) = (1.0, r_peak);
        if bound(lo) < peak - drop {
            for _ in 0..80 {
                let m = 0.5 * (lo + hi);
                if bound(m) < peak - drop {
                    lo = m;
                } else {
                    hi = m;
                }
            }
        }
        lo
    } else {
        1.0
    };
    let mut pts = vec![r_start];
    let span = t_end - r_start;
    let pieces = ((span / (2.0 * width)).ceil() as usize).clamp(1, 48);
    for k in 1..pieces {
        pts.push(r_start + span * k as f64 / pieces as f64);
    }
    pts.push(t_end);
    let mut err = None;
    let high = integrate_points_vec(
        |r: f64| match itilde(r) {
            Ok(it) => {
                let w = (bound(r) - peak).exp() * it;
                [w, w * r * r]
            }
            Err(er) => {
                err.get_or_insert(er);
                [0.0, 0.0]
            }
        },
        &pts,
        cfg,
    )?;
    if let Some(er) = err {
        return Err(er);
    }
    let j0 = first_pair[0] + high[0].value;
    let j1 = first_pair[1] + high[1].value;
    let ln_value = ln_gamma(p.alpha)? - ln_gamma(a)? + (p.beta - p.alpha) * x.ln() + std::f64::consts::LN_2 + peak + j0.ln();
    Ok(LogEval {
        ln_value,
        d_ln_dx: -1.0 + (p.beta - p.alpha) / x + j1 / (j0 * x * x),
    })
}

/// Phi_sharp(beta, alpha, y) for y <= -1.
pub fn phi_sharp(p: &KummerParams, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(ln_phi_sharp(p, y, cfg)?.ln_value.exp())
}

/// Critical points of F(t) = y t + Q log(t/(t+1)) and
/// G(u) = -u^2 + 2 sqrt(-y) u + (2Q + gamma_n) log u, with the values there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceCritical {
    pub t0: f64,
    pub u0: f64,
    pub f_t0: f64,
    pub g_u0: f64,
}

pub fn laplace_critical(q: f64, gamma_n: f64, y: f64) -> Result<LaplaceCritical> {
    if !(y < 0.0) || !y.is_finite() {
        return Err(LabError::OutOfRange { what: "laplace_critical (need y < 0)", value: y });
    }
    if !(q >= 0.0) || !q.is_finite() {
        return Err(LabError::InvalidParameter(format!("Q must be finite and >= 0, got {q}")));
    }
    let x = -y;
    let t0 = 0.5 * (-1.0 + (1.0 + 4.0 * q / x).sqrt());
    let u0 = 0.5 * x.sqrt() * (1.0 + (1.0 + 4.0 * q / x + 2.0 * gamma_n / x).sqrt());
    let f_t0 = if q == 0.0 { 0.0 } else { y * t0 + q * (t0 / (t0 + 1.0)).ln() };
    let g_u0 = -u0 * u0 + 2.0 * x.sqrt() * u0 + (2.0 * q + gamma_n) * u0.ln();
    Ok(LaplaceCritical { t0, u0, f_t0, g_u0 })
}

/// Log of the two envelope shapes bounding a positive function:
/// C^{-1} exp(ln_lower) <= value <= C exp(ln_upper).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeShape {
    pub ln_lower: f64,
    pub ln_upper: f64,
}

fn ln_q_or_zero(q: f64) -> f64 {
    if q > 0.0 {
        q.ln()
    } else {
        0.0
    }
}

/// Envelope shapes for Psi_flat in the Q <= 1 and Q >= 1 regimes.
pub fn psi_flat_envelope(p: &KummerParams, y: f64) -> Result<EnvelopeShape> {
    let x = check_y(y)?;
    if p.q <= 1.0 {
        let s = y + (p.beta - p.alpha) * x.ln();
        return Ok(EnvelopeShape { ln_lower: s, ln_upper: s });
    }
    let lc = laplace_critical(p.q, p.gamma_n, y)?;
    let inv_n = p.gamma_n - 0.5;
    let base = y + lc.f_t0 - ln_gamma(p.q + 1.0)?;
    let lq = ln_q_or_zero(p.q);
    Ok(EnvelopeShape {
        ln_lower: base - (0.25 + 0.5 * inv_n) * lq - x.ln(),
        ln_upper: base + 0.25 * lq,
    })
}

/// Envelope shapes for Phi_sharp in the Q <= 1 and Q >= 1 regimes.
pub fn phi_sharp_envelope(p: &KummerParams, y: f64) -> Result<EnvelopeShape> {
    let x = check_y(y)?;
    if p.q <= 1.0 {
        let s = -p.beta * x.ln();
        return Ok(EnvelopeShape { ln_lower: s, ln_upper: s });
    }
    let lc = laplace_critical(p.q, p.gamma_n, y)?;
    let nf = p.n as f64;
    let base = (2.0 - nf) / (4.0 * nf) * x.ln() + y + lc.g_u0 - ln_gamma(p.q + 1.0)?;
    Ok(EnvelopeShape {
        ln_lower: base - 0.25 * ln_q_or_zero(p.q),
        ln_upper: base,
    })
}

/// ln of the two sides of the product estimate
/// e^{F(t0)+G(u0)} <= C j^{(n+2)/(4n)} z^{(n+2)/4} e^{j z^n} e^{-Q} Q^{Q+(n+2)/(4n)}
/// at y = -j z^n.
pub fn laplace_product_sides(n: u32, j: u32, z: f64, q: f64) -> Result<(f64, f64)> {
    let nf = n as f64;
    let jf = j as f64;
    let x = jf * z.powf(nf);
    let lc = laplace_critical(q, 0.5 + 1.0 / nf, -x)?;
    let e = (nf + 2.0) / (4.0 * nf);
    let rhs = e * jf.ln() + 0.25 * (nf + 2.0) * z.ln() + x - q + if q > 0.0 { (q + e) * q.ln() } else { 0.0 };
    Ok((lc.f_t0 + lc.g_u0, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    // oracle values from an independent 30-digit evaluation of
    // M(beta, alpha, y) and e^y U(alpha - beta, alpha, -y) at n=3, lambda=2, j=1
    const PHI_REF: [(f64, f64); 2] = [(-1.0, 1.417_567_932_813_684), (-3.0, 1.957_025_035_196_248)];
    const PSI_REF: [(f64, f64); 3] = [
        (-1.0, 0.190_349_980_161_850_86),
        (-3.0, 0.012_147_056_738_906_965),
        (-8.0, 3.641_693_016_729_429e-5),
    ];

    #[test]
    fn params_consistency() {
        let p = KummerParams::new(3, 2.0, 1).unwrap();
        assert!((p.alpha - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.beta + 1.0 / 3.0).abs() < 1e-15);
        assert!((p.q - (p.alpha - p.beta - 1.0)).abs() < 1e-15);
        assert!((p.gamma_n - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        assert!(KummerParams::new(3, 1.0, 0).is_err());
    }

    #[test]
    fn psi_flat_reference_values() {
        let p = KummerParams::new(3, 2.0, 1).unwrap();
        for (y, v) in PSI_REF {
            assert!(rel(psi_flat(&p, y, &cfg()).unwrap(), v) < 1e-11, "y={y}");
        }
    }

    #[test]
    fn phi_sharp_reference_values() {
        let p = KummerParams::new(3, 2.0, 1).unwrap();
        for (y, v) in PHI_REF {
            let got = phi_sharp(&p, y, &cfg()).unwrap();
            assert!(rel(got, v) < 1e-10, "y={y}: {got} vs {v}");
        }
    }

    #[test]
    fn beta_zero_reduces_to_exponential() {
        // M(0, alpha, y) = 1 and Psi_flat(0, alpha, y) = e^y U(alpha, alpha, -y)
        // = e^y (-y)^{1-alpha} e^{-y} Gamma(alpha-1, -y) ... check M only
        let p = KummerParams::from_beta(3, 0.0).unwrap();
        for y in [-1.0, -5.0, -40.0] {
            assert!(rel(phi_sharp(&p, y, &cfg()).unwrap(), 1.0) < 1e-10, "y={y}");
        }
    }

    #[test]
    fn log_derivatives_match_differences() {
        let p = KummerParams::new(3, 5.0, 2).unwrap();
        for x in [1.5, 7.0, 60.0] {
            let h = 1e-5 * x;
            let a = ln_psi_flat_at(&p, x + h, &cfg()).unwrap().ln_value;
            let b = ln_psi_flat_at(&p, x - h, &cfg()).unwrap().ln_value;
            let d = ln_psi_flat_at(&p, x, &cfg()).unwrap().d_ln_dx;
            assert!(((a - b) / (2.0 * h) - d).abs() < 1e-6 * d.abs().max(1.0));
            let a = ln_phi_sharp_at(&p, x + h, &cfg()).unwrap().ln_value;
            let b = ln_phi_sharp_at(&p, x - h, &cfg()).unwrap().ln_value;
            let d = ln_phi_sharp_at(&p, x, &cfg()).unwrap().d_ln_dx;
            assert!(((a - b) / (2.0 * h) - d).abs() < 1e-6 * d.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn laplace_critical_examples() {
        let lc = laplace_critical(0.0, 0.8, -2.0).unwrap();
        assert_eq!(lc.t0, 0.0);
        assert_eq!(lc.f_t0, 0.0);
        let lc = laplace_critical(3.0, 0.8, -4.0).unwrap();
        assert!((lc.t0 - 0.5).abs() < 1e-15);
        // u0 is a critical point of G
        let x: f64 = 4.0;
        let dg = -2.0 * lc.u0 + 2.0 * x.sqrt() + (2.0 * 3.0 + 0.8) / lc.u0;
        assert!(dg.abs() < 1e-12);
        assert!(laplace_critical(1.0, 0.8, 0.5).is_err());
    }

    #[test]
    fn domain_checks() {
        let p = KummerParams::new(3, 2.0, 1).unwrap();
        assert!(psi_flat(&p, -0.5, &cfg()).is_err());
        assert!(phi_sharp(&p, 0.0, &cfg()).is_err());
    }
}
