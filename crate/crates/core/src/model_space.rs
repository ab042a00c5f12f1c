//! Calabi model geometry in the separated coordinates (z, y) with t = z^n:
//! metric coefficients, the separated Laplacian, radial distance and volume.

use crate::error::{LabError, Result};
use crate::fit::fit_line;
use crate::mode_ode::Mode;
use crate::radial::RadialFunction;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Complex dimension.
    pub n: u32,
    /// Volume of the divisor, int_D omega_D^{n-1}.
    pub base_volume: f64,
    /// Length assigned to the circle fiber.
    pub fiber_normalization: f64,
}

impl ModelParams {
    pub fn new(n: u32, base_volume: f64, fiber_normalization: f64) -> Result<Self> {
        let p = ModelParams { n, base_volume, fiber_normalization };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(LabError::InvalidParameter(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.base_volume > 0.0 && self.base_volume.is_finite()) {
            return Err(LabError::InvalidParameter("base_volume must be positive".into()));
        }
        if !(self.fiber_normalization > 0.0 && self.fiber_normalization.is_finite()) {
            return Err(LabError::InvalidParameter("fiber_normalization must be positive".into()));
        }
        Ok(())
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { n: 3, base_volume: 1.0, fiber_normalization: 1.0 }
    }
}

/// (horizontal, fiber) coefficients of omega_C = z i ddbar t + (1/(n z^{n-1})) i dt ^ dbar t.
pub fn metric_coefficients(params: &ModelParams, z: f64) -> Result<(f64, f64)> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(LabError::OutOfRange { what: "metric_coefficients (need z > 0)", value: z });
    }
    Ok((z, 1.0 / (params.nf() * z.powi(params.n as i32 - 1))))
}

/// Potential of the mode ODE u'' - V u = n z^{n-1} v:
/// V(z) = n lambda z^{n-2} + (j^2 n^2 / 4) z^{2n-2}.
pub fn mode_potential(n: u32, mode: &Mode, z: f64) -> f64 {
    let nf = n as f64;
    let j = mode.j as f64;
    nf * mode.lambda * z.powi(n as i32 - 2) + 0.25 * j * j * nf * nf * z.powi(2 * n as i32 - 2)
}

/// Radial coefficient of Delta(u psi) for an eigenmode psi:
/// (1/(n z^{n-1})) (u'' - V u).
pub fn laplacian_separated(params: &ModelParams, u: &RadialFunction, mode: &Mode) -> Result<RadialFunction> {
    mode.validate()?;
    let d2 = u.second_derivative()?;
    let n = params.n;
    let nf = params.nf();
    d2.zip_map(u, |z, upp, uv| (upp - mode_potential(n, mode, z) * uv) / (nf * z.powi(n as i32 - 1)))
}

/// Radial Laplacian written in t: (n-1) u_t / z + n z^{n-1} u_tt.
pub fn laplacian_t(params: &ModelParams, u: &RadialFunction) -> Result<RadialFunction> {
    let (ut, utt) = u.t_derivatives()?;
    let nf = params.nf();
    let n = params.n as i32;
    ut.zip_map(&utt, |z, a, b| (nf - 1.0) * a / z + nf * z.powi(n - 1) * b)
}

fn check_order(z1: f64, z2: f64) -> Result<()> {
    if !(z1 > 0.0) || !z2.is_finite() {
        return Err(LabError::OutOfRange { what: "radial coordinate (need z > 0)", value: z1 });
    }
    if z1 > z2 {
        return Err(LabError::Ordering(format!("z1 = {z1} > z2 = {z2}")));
    }
    Ok(())
}

/// Length of the radial geodesic between the level sets z1 <= z2:
/// int sqrt(n) s^{(n-1)/2} ds.
pub fn radial_distance(params: &ModelParams, z1: f64, z2: f64) -> Result<f64> {
    check_order(z1, z2)?;
    let nf = params.nf();
    let e = 0.5 * (nf + 1.0);
    Ok(2.0 * nf.sqrt() / (nf + 1.0) * (z2.powf(e) - z1.powf(e)))
}

/// Volume of {z1 <= z <= z2}: base_volume * fiber_normalization * (z2^n - z1^n).
pub fn volume_of_shell(params: &ModelParams, z1: f64, z2: f64) -> Result<f64> {
    check_order(z1, z2)?;
    let n = params.n as i32;
    Ok(params.base_volume * params.fiber_normalization * (z2.powi(n) - z1.powi(n)))
}

/// Fitted exponent of log Vol(B(R)) against log R for balls around the
/// inner level z_ref, with R sampled log-uniformly in [r_lo, r_hi].
pub fn volume_growth_exponent(params: &ModelParams, z_ref: f64, r_lo: f64, r_hi: f64, samples: usize) -> Result<f64> {
    if samples < 2 || !(r_hi > r_lo && r_lo > 0.0) {
        return Err(LabError::InvalidParameter("need r_hi > r_lo > 0 and at least 2 samples".into()));
    }
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for k in 0..samples {
        let r = r_lo * (r_hi / r_lo).powf(k as f64 / (samples - 1) as f64);
        // invert the distance by bisection on z
        let mut hi = z_ref.max(1.0);
        while radial_distance(params, z_ref, hi)? < r {
            hi *= 2.0;
        }
        let mut lo = z_ref;
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if radial_distance(params, z_ref, m)? < r {
                lo = m;
            } else {
                hi = m;
            }
        }
        let z = 0.5 * (lo + hi);
        lx.push(r.ln());
        ly.push(volume_of_shell(params, z_ref, z)?.ln());
    }
    Ok(fit_line(&lx, &ly)?.slope)
}
