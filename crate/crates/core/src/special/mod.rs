//! Gamma, modified Bessel and Kummer-type functions from integral
//! representations, with two-sided envelope certification.

mod bessel;
mod gamma;
mod kummer;

pub use bessel::{
    bessel_i, bessel_i_prime, bessel_i_prime_scaled, bessel_i_scaled, bessel_k, bessel_k_prime,
    bessel_k_prime_over_n, bessel_k_prime_scaled, bessel_k_scaled, ln_bessel_i, ln_bessel_k, MIN_ARGUMENT,
};
pub(crate) use bessel::{i_prime_scaled_raw, i_scaled_raw, k_scaled_raw};
pub use gamma::{gamma_fn, ln_gamma};
pub use kummer::{
    laplace_critical, laplace_product_sides, ln_phi_sharp, ln_psi_flat, phi_sharp, phi_sharp_envelope, psi_flat,
    psi_flat_envelope, EnvelopeShape, KummerParams, LaplaceCritical, LogEval,
};
pub(crate) use kummer::{ln_phi_sharp_at, ln_psi_flat_at};

use serde::Serialize;

/// Empirical envelope constants over a sample set: every sample satisfies
/// exp(ln_lower)/c_lower <= value <= c_upper exp(ln_upper).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeCertificate {
    pub c_lower: f64,
    pub c_upper: f64,
    pub samples: usize,
}

impl EnvelopeCertificate {
    pub fn new() -> Self {
        EnvelopeCertificate { c_lower: 0.0, c_upper: 0.0, samples: 0 }
    }

    /// Record one sample given in log form.
    pub fn record(&mut self, ln_value: f64, shape: EnvelopeShape) {
        self.c_upper = self.c_upper.max((ln_value - shape.ln_upper).exp());
        self.c_lower = self.c_lower.max((shape.ln_lower - ln_value).exp());
        self.samples += 1;
    }

    /// The single constant C with C^{-1} lower <= value <= C upper.
    pub fn constant(&self) -> f64 {
        self.c_lower.max(self.c_upper).max(1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.c_lower.is_finite() && self.c_upper.is_finite() && self.samples > 0
    }
}

impl Default for EnvelopeCertificate {
    fn default() -> Self {
        Self::new()
    }
}
