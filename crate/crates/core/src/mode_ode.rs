//! The per-mode radial ODE
//!
//!   u'' - V(z) u = n z^{n-1} v,   V = n lambda z^{n-2} + (j^2 n^2/4) z^{2n-2},
//!
//! its decaying/growing fundamental pair (D, G), the Green solve
//!
//!   u(z) = (n/W) (D(z) int_1^z G s^{n-1} v ds + G(z) int_z^inf D s^{n-1} v ds)
//!
//! with W = G D' - G' D, the fiber (zero-eigenvalue) double integral, and a
//! Numerov two-point solver used as an independent oracle.

use crate::error::{LabError, Result};
use crate::fit::{end_exponent, power_tail};
use crate::model_space::mode_potential;
use crate::par;
use crate::quadrature::{cached_rule, QuadratureConfig};
use crate::radial::{RadialFunction, RadialGrid};
use crate::special::{
    gamma_fn, i_prime_scaled_raw, i_scaled_raw, k_scaled_raw, ln_phi_sharp_at, ln_psi_flat_at, KummerParams,
};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One separated mode: eigenvalue lambda of the divisor Laplacian and fiber degree j.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub lambda: f64,
    pub j: u32,
}

impl Mode {
    pub fn new(lambda: f64, j: u32) -> Result<Self> {
        let m = Mode { lambda, j };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(LabError::InvalidParameter(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn is_radial(&self) -> bool {
        self.lambda == 0.0 && self.j == 0
    }
}

/// ln D, ln G and their z-derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEval {
    pub ln_d: f64,
    pub dln_d: f64,
    pub ln_g: f64,
    pub dln_g: f64,
}

impl PairEval {
    /// G D' - G' D.
    pub fn wronskian(&self) -> f64 {
        (self.ln_d + self.ln_g).exp() * (self.dln_d - self.dln_g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairKind {
    /// D = sqrt(z) K_{1/n}(w), G = sqrt(z) I_{1/n}(w), w = 2 sqrt(lambda/n) z^{n/2}.
    Zero { c: f64 },
    /// D = e^{x/2} Psi_flat(beta, alpha, -x), G = e^{x/2} Phi_sharp(beta, alpha, -x), x = j z^n.
    NonZero { params: KummerParams },
}

/// Decaying and growing homogeneous solutions of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalPair {
    pub n: u32,
    pub mode: Mode,
    pub kind: PairKind,
    pub cfg: QuadratureConfig,
}

pub fn fundamental_zero(n: u32, lambda: f64, cfg: &QuadratureConfig) -> Result<FundamentalPair> {
    if n < 2 {
        return Err(LabError::InvalidParameter(format!("n must be at least 2, got {n}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(LabError::InvalidParameter(format!("zero-mode pair needs lambda > 0, got {lambda}")));
    }
    let c = 2.0 * (lambda / n as f64).sqrt();
    Ok(FundamentalPair { n, mode: Mode { lambda, j: 0 }, kind: PairKind::Zero { c }, cfg: *cfg })
}

pub fn fundamental_nonzero(n: u32, lambda: f64, j: u32, cfg: &QuadratureConfig) -> Result<FundamentalPair> {
    let params = KummerParams::new(n, lambda, j)?;
    Ok(FundamentalPair { n, mode: Mode { lambda, j }, kind: PairKind::NonZero { params }, cfg: *cfg })
}

impl FundamentalPair {
    pub fn for_mode(n: u32, mode: &Mode, cfg: &QuadratureConfig) -> Result<Self> {
        mode.validate()?;
        if mode.j == 0 {
            fundamental_zero(n, mode.lambda, cfg)
        } else {
            fundamental_nonzero(n, mode.lambda, mode.j, cfg)
        }
    }

    /// -n/2 for the zero mode, Gamma(alpha-1)/Gamma(alpha-beta) j^{1/n} otherwise.
    pub fn expected_wronskian(&self) -> Result<f64> {
        match &self.kind {
            PairKind::Zero { .. } => Ok(-0.5 * self.n as f64),
            PairKind::NonZero { params } => {
                let jf = self.mode.j as f64;
                Ok(gamma_fn(params.alpha - 1.0)? / gamma_fn(params.a())? * jf.powf(1.0 / self.n as f64))
            }
        }
    }

    /// Exponential rate separated out before interpolation: w(z) or j z^n / 2.
    pub fn phase(&self, z: f64) -> (f64, f64) {
        let nf = self.n as f64;
        match &self.kind {
            PairKind::Zero { c } => (c * z.powf(0.5 * nf), c * 0.5 * nf * z.powf(0.5 * nf - 1.0)),
            PairKind::NonZero { .. } => {
                let jf = self.mode.j as f64;
                (0.5 * jf * z.powf(nf), 0.5 * jf * nf * z.powf(nf - 1.0))
            }
        }
    }

    pub fn eval(&self, z: f64) -> Result<PairEval> {
        if !(z >= 1.0) || !z.is_finite() {
            return Err(LabError::OutOfRange { what: "fundamental pair (need z >= 1)", value: z });
        }
        let nf = self.n as f64;
        match &self.kind {
            PairKind::Zero { c } => {
                let nu = 1.0 / nf;
                let w = c * z.powf(0.5 * nf);
                let dw = c * 0.5 * nf * z.powf(0.5 * nf - 1.0);
                let k = k_scaled_raw(nu, w, &self.cfg)?;
                let kp = -0.5 * (k_scaled_raw(nu + 1.0, w, &self.cfg)? + k_scaled_raw(nu - 1.0, w, &self.cfg)?);
                let i = i_scaled_raw(nu, w, &self.cfg)?;
                let ip = i_prime_scaled_raw(nu, w, &self.cfg)?;
                let half = 0.5 * z.ln();
                Ok(PairEval {
                    ln_d: half + k.ln() - w,
                    dln_d: 0.5 / z + kp / k * dw,
                    ln_g: half + i.ln() + w,
                    dln_g: 0.5 / z + ip / i * dw,
                })
            }
            PairKind::NonZero { params } => {
                let jf = self.mode.j as f64;
                let x = jf * z.powf(nf);
                let dx = jf * nf * z.powf(nf - 1.0);
                let d = ln_psi_flat_at(params, x, &self.cfg)?;
                let g = ln_phi_sharp_at(params, x, &self.cfg)?;
                Ok(PairEval {
                    ln_d: 0.5 * x + d.ln_value,
                    dln_d: (0.5 + d.d_ln_dx) * dx,
                    ln_g: 0.5 * x + g.ln_value,
                    dln_g: (0.5 + g.d_ln_dx) * dx,
                })
            }
        }
    }

    pub fn decaying(&self, z: f64) -> Result<f64> {
        Ok(self.eval(z)?.ln_d.exp())
    }

    pub fn growing(&self, z: f64) -> Result<f64> {
        Ok(self.eval(z)?.ln_g.exp())
    }

    /// Numerically evaluated G D' - G' D at z.
    pub fn wronskian(&self, z: f64) -> Result<f64> {
        Ok(self.eval(z)?.wronskian())
    }
}

/// Declared bound |v(z)| <= c0 z^delta used to certify the truncated tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceBound {
    pub c0: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenConfig {
    pub quadrature: QuadratureConfig,
    /// Width in ln z of the panels on which ln D and ln G are tabulated.
    pub table_width: f64,
    pub table_order: usize,
    /// Largest change of the exponential phase across one integration panel.
    pub max_phase_step: f64,
    /// Largest width in ln z of one integration panel.
    pub max_log_step: f64,
    /// Certified tail remainder allowed relative to sup |u|.
    pub tail_tol: f64,
}

impl Default for GreenConfig {
    fn default() -> Self {
        GreenConfig {
            quadrature: QuadratureConfig::default(),
            table_width: 0.25,
            table_order: 16,
            max_phase_step: 2.0,
            max_log_step: 0.04,
            tail_tol: 1e-12,
        }
    }
}

/// ln D, ln G and their derivatives tabulated on a panel grid, stored as the
/// slowly varying remainders after removing the exponential phase.
pub struct GreenSolver {
    pair: FundamentalPair,
    lower: f64,
    z_max: f64,
    table: Arc<RadialGrid>,
    rem: [RadialFunction; 4],
    prefactor: f64,
    cfg: GreenConfig,
}

/// Result of one Green solve.
#[derive(Debug, Clone)]
pub struct GreenSolution {
    pub u: RadialFunction,
    pub du: RadialFunction,
    pub source: RadialFunction,
    pub mode: Mode,
    /// sup |u| * denominator / z^{delta+1} over the output grid.
    pub bound_report: f64,
    /// Largest certified remainder from truncating the tail at z_max.
    pub tail_remainder: f64,
    pub z_max: f64,
}

/// Weight of the Prop-A bound: lambda for the zero mode, j^2 n^2 z^n/4 + n lambda otherwise.
pub fn bound_denominator(n: u32, mode: &Mode, z: f64) -> f64 {
    let nf = n as f64;
    if mode.j == 0 {
        mode.lambda
    } else {
        let j = mode.j as f64;
        0.25 * j * j * nf * nf * z.powf(nf) + nf * mode.lambda
    }
}

impl GreenSolver {
    /// Tabulate the pair on [lower, z_max].
    pub fn new(pair: FundamentalPair, lower: f64, z_max: f64, cfg: &GreenConfig) -> Result<Self> {
        if !(lower >= 1.0 && z_max > lower && z_max.is_finite()) {
            return Err(LabError::Ordering(format!("need 1 <= lower < z_max, got [{lower}, {z_max}]")));
        }
        let table = Arc::new(RadialGrid::panels_by_width(pair.n, lower, z_max, cfg.table_width, cfg.table_order)?);
        let evals = par::try_map(table.z(), |&z| pair.eval(z))?;
        let mut rem: [Vec<f64>; 4] = Default::default();
        for (e, &z) in evals.iter().zip(table.z()) {
            let (ph, dph) = pair.phase(z);
            rem[0].push(e.ln_d + ph);
            rem[1].push(e.dln_d + dph);
            rem[2].push(e.ln_g - ph);
            rem[3].push(e.dln_g - dph);
        }
        let [a, b, c, d] = rem;
        let rem = [
            RadialFunction::new(table.clone(), a)?,
            RadialFunction::new(table.clone(), b)?,
            RadialFunction::new(table.clone(), c)?,
            RadialFunction::new(table.clone(), d)?,
        ];
        let prefactor = pair.n as f64 / pair.expected_wronskian()?;
        Ok(GreenSolver { pair, lower, z_max, table, rem, prefactor, cfg: *cfg })
    }

    pub fn pair(&self) -> &FundamentalPair {
        &self.pair
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    /// Interpolated (ln D, dln D, ln G, dln G) at z in [lower, z_max].
    pub fn interpolated(&self, z: f64) -> Result<PairEval> {
        let (ph, dph) = self.pair.phase(z);
        let (start, w) = self.table.interpolation_weights(z)?;
        let r: [f64; 4] = std::array::from_fn(|i| {
            w.iter().zip(&self.rem[i].values()[start..]).map(|(a, b)| a * b).sum()
        });
        Ok(PairEval { ln_d: r[0] - ph, dln_d: r[1] - dph, ln_g: r[2] + ph, dln_g: r[3] + dph })
    }

    /// n / W.
    pub fn prefactor(&self) -> f64 {
        self.prefactor
    }

    /// Smallest z_max (searched geometrically) for which the tail beyond it is
    /// certifiable at `z_last` for a source bounded by `bound`.
    pub fn suggest_z_max(pair: &FundamentalPair, z_last: f64, bound: &SourceBound, tol: f64) -> Result<f64> {
        let at_last = pair.eval(z_last)?;
        let mut z = z_last * 1.05;
        for _ in 0..200 {
            let e = pair.eval(z)?;
            let p = pair.n as f64 - 1.0 + bound.delta;
            let rate = -e.dln_d - p.max(0.0) / z;
            if rate > 0.0 {
                let ln_rem = at_last.ln_g + e.ln_d + p * z.ln() - rate.ln();
                let ln_u = at_last.ln_g + at_last.ln_d + bound.delta * z_last.ln() + (pair.n as f64 - 1.0) * z_last.ln();
                if ln_rem < ln_u + tol.ln() - 2.0 {
                    return Ok(z);
                }
            }
            z *= 1.05;
        }
        Err(LabError::TailNotCertifiable(format!("no truncation point found beyond z = {z_last}")))
    }

    fn integration_panels(&self, a: f64, b: f64) -> Vec<f64> {
        let (pa, _) = self.pair.phase(a);
        let (pb, _) = self.pair.phase(b);
        let by_phase = ((pb - pa) / self.cfg.max_phase_step).ceil();
        let by_log = ((b / a).ln() / self.cfg.max_log_step).ceil();
        let k = by_phase.max(by_log).max(1.0) as usize;
        // split uniformly in the phase when it dominates, else in ln z
        (0..=k)
            .map(|i| {
                let f = i as f64 / k as f64;
                if by_phase > by_log {
                    let target = pa + f * (pb - pa);
                    self.invert_phase(target, a, b)
                } else {
                    a * (b / a).powf(f)
                }
            })
            .collect()
    }

    fn invert_phase(&self, target: f64, a: f64, b: f64) -> f64 {
        // the phase is a power of z: c z^p
        let (pa, _) = self.pair.phase(a);
        let p = match self.pair.kind {
            PairKind::Zero { .. } => 0.5 * self.pair.n as f64,
            PairKind::NonZero { .. } => self.pair.n as f64,
        };
        if pa <= 0.0 {
            return a;
        }
        (a * (target / pa).powf(1.0 / p)).clamp(a, b)
    }

    /// Solve at the samples of `out` (all inside [lower, z_max]) for the
    /// source `v`, certifying the tail beyond z_max with `bound`.
    pub fn solve<F>(&self, out: Arc<RadialGrid>, v: F, bound: &SourceBound) -> Result<GreenSolution>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let zs = out.z();
        if zs.is_empty() {
            return Err(LabError::InvalidParameter("empty output grid".into()));
        }
        if zs[0] < self.lower * (1.0 - 1e-14) || zs[zs.len() - 1] > self.z_max * (1.0 + 1e-14) {
            return Err(LabError::OutOfRange { what: "Green output outside [lower, z_max]", value: zs[zs.len() - 1] });
        }
        let nf = self.pair.n as f64;
        let n1 = self.pair.n as i32 - 1;
        let f = |s: f64| s.powi(n1) * v(s);
        let rule = cached_rule(16);
        let m = zs.len();
        let at: Vec<PairEval> = par::try_map(zs, |&z| self.interpolated(z))?;
        // forward: A_k = D(z_k) int_lower^{z_k} G f
        let left_edges: Vec<f64> = (0..m).map(|k| if k == 0 { self.lower } else { zs[k - 1] }).collect();
        let forward_pieces: Vec<f64> = par::try_map_range(m, |k| {
            let (a, b) = (left_edges[k], zs[k]);
            if b <= a {
                return Ok(0.0);
            }
            let ld = at[k].ln_d;
            let mut s = 0.0;
            for w in self.integration_panels(a, b).windows(2) {
                let mut err = None;
                s += rule.integrate(
                    |x| match self.interpolated(x) {
                        Ok(e) => (ld + e.ln_g).exp() * f(x),
                        Err(er) => {
                            err.get_or_insert(er);
                            0.0
                        }
                    },
                    w[0],
                    w[1],
                );
                if let Some(er) = err {
                    return Err(er);
                }
            }
            Ok(s)
        })?;
        let right_edges: Vec<f64> = (0..m).map(|k| if k + 1 < m { zs[k + 1] } else { self.z_max }).collect();
        let backward_pieces: Vec<f64> = par::try_map_range(m, |k| {
            let (a, b) = (zs[k], right_edges[k]);
            if b <= a {
                return Ok(0.0);
            }
            let lg = at[k].ln_g;
            let mut s = 0.0;
            for w in self.integration_panels(a, b).windows(2) {
                let mut err = None;
                s += rule.integrate(
                    |x| match self.interpolated(x) {
                        Ok(e) => (lg + e.ln_d).exp() * f(x),
                        Err(er) => {
                            err.get_or_insert(er);
                            0.0
                        }
                    },
                    w[0],
                    w[1],
                );
                if let Some(er) = err {
                    return Err(er);
                }
            }
            Ok(s)
        })?;
        let mut a_k = vec![0.0; m];
        let mut acc = 0.0;
        for k in 0..m {
            if k > 0 {
                acc *= (at[k].ln_d - at[k - 1].ln_d).exp();
            }
            acc += forward_pieces[k];
            a_k[k] = acc;
        }
        let mut b_k = vec![0.0; m];
        let mut acc = 0.0;
        for k in (0..m).rev() {
            if k + 1 < m {
                acc *= (at[k].ln_g - at[k + 1].ln_g).exp();
            }
            acc += backward_pieces[k];
            b_k[k] = acc;
        }
        let pre = self.prefactor;
        let u: Vec<f64> = (0..m).map(|k| pre * (a_k[k] + b_k[k])).collect();
        let du: Vec<f64> = (0..m).map(|k| pre * (at[k].dln_d * a_k[k] + at[k].dln_g * b_k[k])).collect();

        // certified remainder of the dropped tail int_{z_max}^inf D s^{n-1} v
        let top = self.interpolated(self.z_max)?;
        let p = nf - 1.0 + bound.delta;
        let rate = -top.dln_d - p.max(0.0) / self.z_max;
        if !(rate > 0.0) {
            return Err(LabError::TailNotCertifiable(format!(
                "decay rate {} of D at z_max = {} does not dominate source growth z^{}",
                -top.dln_d, self.z_max, p
            )));
        }
        let ln_tail = top.ln_d + p * self.z_max.ln() - rate.ln() + bound.c0.abs().max(f64::MIN_POSITIVE).ln();
        let sup_u = u.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut remainder: f64 = 0.0;
        for e in &at {
            remainder = remainder.max(pre.abs() * (e.ln_g + ln_tail).exp());
        }
        if bound.c0 != 0.0 && remainder > self.cfg.tail_tol * sup_u.max(f64::MIN_POSITIVE) && sup_u > 0.0 {
            return Err(LabError::TailNotCertifiable(format!(
                "remainder {remainder:e} exceeds {:e} * sup|u| = {sup_u:e}; raise z_max beyond {}",
                self.cfg.tail_tol, self.z_max
            )));
        }
        let mode = self.pair.mode;
        let bound_report = zs
            .iter()
            .zip(&u)
            .map(|(&z, uv)| uv.abs() * bound_denominator(self.pair.n, &mode, z) / z.powf(bound.delta + 1.0))
            .fold(0.0, f64::max);
        let source = RadialFunction::from_fn(out.clone(), &v);
        Ok(GreenSolution {
            u: RadialFunction::new(out.clone(), u)?,
            du: RadialFunction::new(out, du)?,
            source,
            mode,
            bound_report,
            tail_remainder: remainder,
            z_max: self.z_max,
        })
    }
}

/// Green solve for (lambda, j = 0) on the samples of `out`.
pub fn green_solve_zero<F>(
    n: u32,
    lambda: f64,
    out: Arc<RadialGrid>,
    v: F,
    bound: &SourceBound,
    z_max: f64,
    cfg: &GreenConfig,
) -> Result<GreenSolution>
where
    F: Fn(f64) -> f64 + Sync,
{
    let pair = fundamental_zero(n, lambda, &cfg.quadrature)?;
    GreenSolver::new(pair, 1.0, z_max, cfg)?.solve(out, v, bound)
}

/// Green solve for (lambda, j >= 1) on the samples of `out`.
#[allow(clippy::too_many_arguments)]
pub fn green_solve_nonzero<F>(
    n: u32,
    lambda: f64,
    j: u32,
    out: Arc<RadialGrid>,
    v: F,
    bound: &SourceBound,
    z_max: f64,
    cfg: &GreenConfig,
) -> Result<GreenSolution>
where
    F: Fn(f64) -> f64 + Sync,
{
    if j == 0 {
        return Err(LabError::InvalidParameter("nonzero-mode solve needs j >= 1".into()));
    }
    let pair = fundamental_nonzero(n, lambda, j, &cfg.quadrature)?;
    GreenSolver::new(pair, 1.0, z_max, cfg)?.solve(out, v, bound)
}

/// Residual u'' - V u - n z^{n-1} v divided by n z^{n-1}|v| + V|u| (pointwise,
/// with the sup of the scale as a floor), using the grid's second derivative.
pub fn ode_residual(n: u32, mode: &Mode, u: &RadialFunction, v: &RadialFunction) -> Result<RadialFunction> {
    let d2 = u.second_derivative()?;
    let nf = n as f64;
    let scales: Vec<f64> = u
        .z()
        .iter()
        .zip(u.values().iter().zip(v.values()))
        .map(|(&z, (uv, vv))| nf * z.powi(n as i32 - 1) * vv.abs() + mode_potential(n, mode, z) * uv.abs())
        .collect();
    let floor = scales.iter().fold(0.0f64, |a, b| a.max(*b)) * 1e-6;
    let values = (0..u.values().len())
        .map(|i| {
            let z = u.z()[i];
            let r = d2.values()[i] - mode_potential(n, mode, z) * u.values()[i] - nf * z.powi(n as i32 - 1) * v.values()[i];
            r / scales[i].max(floor).max(f64::MIN_POSITIVE)
        })
        .collect();
    RadialFunction::new(u.grid().clone(), values)
}

/// Fiber-direction solution u0 with u0'' = n z^{n-1} v.
#[derive(Debug, Clone)]
pub struct FiberSolution {
    pub u: RadialFunction,
    pub du: RadialFunction,
    /// Inner limit C2 taken at +inf.
    pub inner_at_infinity: bool,
    /// Outer limit C1 taken at +inf.
    pub outer_at_infinity: bool,
}

/// Number of trailing samples used to extrapolate integrals past the grid end.
const TAIL_SAMPLES: usize = 12;

/// int_{upper}^inf f, extrapolating the trailing samples by a power law.
fn tail_beyond(f: &RadialFunction, declared: f64) -> Result<f64> {
    let (z, v) = (f.z(), f.values());
    let n = z.len();
    let (z_end, f_end) = (z[n - 1], v[n - 1]);
    if f_end == 0.0 {
        return Ok(0.0);
    }
    let p = match end_exponent(z, v, TAIL_SAMPLES.min(n)) {
        Some(p) if p < -1.0 => p,
        _ => declared,
    };
    let upper = f.grid().upper();
    power_tail(upper, f_end * (upper / z_end).powf(p), p).ok_or(LabError::NoConvergentLimits { delta: declared })
}

/// u0(z) = int_{C1}^z int_{C2}^t n s^{n-1} v(s) ds dt with C1, C2 in {lower, +inf}:
/// each limit is +inf exactly when the corresponding integral converges at
/// infinity for a source of declared order delta.
pub fn fiber_mode_solve(n: u32, v: &RadialFunction, delta: f64) -> Result<FiberSolution> {
    if !delta.is_finite() {
        return Err(LabError::NoConvergentLimits { delta });
    }
    let nf = n as f64;
    // n s^{n-1} v = O(s^{n-1+delta}) converges iff n - 1 + delta < -1
    let inner_inf = nf - 1.0 + delta < -1.0;
    let integrand = v.map(|z, val| nf * z.powi(n as i32 - 1) * val);
    let du = if inner_inf {
        let tail = tail_beyond(&integrand, nf - 1.0 + delta)?;
        integrand.tail_integral().map(|_, t| -(t + tail))
    } else {
        integrand.cumulative_integral()
    };
    // u0' = O(z^{n+delta}) (or O(log z) at n + delta = 0)
    let du_order = if inner_inf || nf + delta > 0.0 { nf + delta } else { 0.0 };
    let outer_inf = inner_inf && du_order < -1.0;
    let u = if outer_inf {
        let tail = tail_beyond(&du, du_order)?;
        du.tail_integral().map(|_, t| -(t + tail))
    } else {
        du.cumulative_integral()
    };
    Ok(FiberSolution { u, du, inner_at_infinity: inner_inf, outer_at_infinity: outer_inf })
}

/// Fourth-order Numerov solution of u'' = V u + n z^{n-1} v on [a, b] with
/// `intervals` uniform steps and Dirichlet data u(a) = ua, u(b) = ub.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_bvp<F: Fn(f64) -> f64>(
    n: u32,
    mode: &Mode,
    v: F,
    a: f64,
    b: f64,
    ua: f64,
    ub: f64,
    intervals: usize,
) -> Result<RadialFunction> {
    mode.validate()?;
    if !(b > a && a > 0.0) {
        return Err(LabError::Ordering(format!("need 0 < a < b, got [{a}, {b}]")));
    }
    if intervals < 2 {
        return Err(LabError::GridTooCoarse(format!("{intervals} intervals")));
    }
    let grid = Arc::new(RadialGrid::uniform_z(n, a, b, intervals + 1)?);
    let z = grid.z();
    let h = (b - a) / intervals as f64;
    let h2 = h * h / 12.0;
    let nf = n as f64;
    let pot: Vec<f64> = z.iter().map(|&x| mode_potential(n, mode, x)).collect();
    let g: Vec<f64> = z.iter().map(|&x| nf * x.powi(n as i32 - 1) * v(x)).collect();
    let m = intervals - 1;
    let (mut lo, mut di, mut up, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for r in 0..m {
        let i = r + 1;
        lo[r] = 1.0 - h2 * pot[i - 1];
        di[r] = -2.0 - 10.0 * h2 * pot[i];
        up[r] = 1.0 - h2 * pot[i + 1];
        rhs[r] = h2 * (g[i - 1] + 10.0 * g[i] + g[i + 1]);
    }
    rhs[0] -= lo[0] * ua;
    rhs[m - 1] -= up[m - 1] * ub;
    let inner = solve_tridiagonal(&lo, &di, &up, &rhs)?;
    let mut values = Vec::with_capacity(intervals + 1);
    values.push(ua);
    values.extend(inner);
    values.push(ub);
    RadialFunction::new(grid, values)
}

/// Thomas algorithm; `lo[0]` and `up[m-1]` are ignored.
pub fn solve_tridiagonal(lo: &[f64], di: &[f64], up: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = di.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut piv = di[0];
    if piv == 0.0 {
        return Err(LabError::Singular(0));
    }
    c[0] = up[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..m {
        piv = di[i] - lo[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return Err(LabError::Singular(i));
        }
        c[i] = if i + 1 < m { up[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / piv;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qcfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn zero_mode_wronskian_is_constant() {
        let pair = fundamental_zero(3, 1.0, &qcfg()).unwrap();
        assert_eq!(pair.expected_wronskian().unwrap(), -1.5);
        for z in [1.0, 1.7, 2.5, 3.9, 5.0] {
            let w = pair.wronskian(z).unwrap();
            assert!((w + 1.5).abs() < 1e-9, "z={z}: {w}");
        }
    }

    #[test]
    fn nonzero_mode_wronskian_reference() {
        let pair = fundamental_nonzero(3, 2.0, 1, &qcfg()).unwrap();
        let w = pair.expected_wronskian().unwrap();
        assert!((w + 4.062_353_818_279_2).abs() < 1e-9);
        for z in [1.0, 1.5, 2.0, 3.0] {
            let got = pair.wronskian(z).unwrap();
            assert!(((got - w) / w).abs() < 1e-9, "z={z}: {got}");
        }
    }

    #[test]
    fn pair_is_monotone_and_positive() {
        for pair in [
            fundamental_zero(3, 2.0, &qcfg()).unwrap(),
            fundamental_nonzero(3, 1.0, 2, &qcfg()).unwrap(),
        ] {
            for z in [1.0, 1.5, 2.0, 3.0] {
                let e = pair.eval(z).unwrap();
                assert!(e.ln_d.is_finite() && e.ln_g.is_finite());
                assert!(e.dln_d < 0.0 && e.dln_g > 0.0);
            }
        }
    }

    #[test]
    fn numerov_manufactured_solution_and_order() {
        let mode = Mode::new(1.0, 1).unwrap();
        let n = 3;
        let exact = |z: f64| 1.0 / z;
        let v = |z: f64| (2.0 / z.powi(3) - mode_potential(n, &mode, z) / z) / (3.0 * z * z);
        let err = |k: usize| {
            let u = brute_force_bvp(n, &mode, v, 1.0, 3.0, 1.0, 1.0 / 3.0, k).unwrap();
            u.values().iter().zip(u.z()).map(|(a, z)| (a - exact(*z)).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(100), err(200));
        assert!(e2 < 1e-7);
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn numerov_zero_data_gives_zero() {
        let u = brute_force_bvp(3, &Mode::new(2.0, 0).unwrap(), |_| 0.0, 1.0, 2.0, 0.0, 0.0, 50).unwrap();
        assert!(u.max_abs() == 0.0);
    }

    #[test]
    fn fiber_solve_examples() {
        let g = Arc::new(RadialGrid::panels(3, 1.0, 50.0, 40, 16).unwrap());
        // v = z^{-4}: inner limit at infinity, u0' = -3/z, u0 = -3 ln z
        let v = RadialFunction::from_fn(g.clone(), |z| z.powi(-4));
        let s = fiber_mode_solve(3, &v, -4.0).unwrap();
        assert!(s.inner_at_infinity && !s.outer_at_infinity);
        for ((u, du), z) in s.u.values().iter().zip(s.du.values()).zip(g.z()) {
            assert!((du + 3.0 / z).abs() < 1e-10);
            assert!((u + 3.0 * z.ln()).abs() < 1e-9);
        }
        // v = z^{-2}: u0 = 1.5 (z-1)^2
        let v = RadialFunction::from_fn(g.clone(), |z| z.powi(-2));
        let s = fiber_mode_solve(3, &v, -2.0).unwrap();
        assert!(!s.inner_at_infinity);
        for (u, z) in s.u.values().iter().zip(g.z()) {
            assert!((u - 1.5 * (z - 1.0).powi(2)).abs() < 1e-9 * z * z);
        }
        let zero = RadialFunction::zeros(g.clone());
        assert_eq!(fiber_mode_solve(3, &zero, -3.0).unwrap().u.max_abs(), 0.0);
        assert!(fiber_mode_solve(3, &zero, f64::NAN).is_err());
    }

    #[test]
    fn both_limits_at_infinity_for_fast_decay() {
        let g = Arc::new(RadialGrid::panels(3, 1.0, 60.0, 40, 16).unwrap());
        // v = z^{-6}: u0' = -3/(3 z^3)... int_z^inf 3 s^{-4} = z^{-3}; u0 = int_inf^z -s^{-3} = 1/(2 z^2)
        let v = RadialFunction::from_fn(g.clone(), |z| z.powi(-6));
        let s = fiber_mode_solve(3, &v, -6.0).unwrap();
        assert!(s.inner_at_infinity && s.outer_at_infinity);
        for (u, z) in s.u.values().iter().zip(g.z()) {
            assert!((u - 0.5 / (z * z)).abs() < 1e-9 / (z * z));
        }
    }

    #[test]
    fn green_zero_source_gives_zero() {
        let out = Arc::new(RadialGrid::uniform_z(3, 1.0, 4.0, 31).unwrap());
        let b = SourceBound { c0: 0.0, delta: -2.0 };
        let s = green_solve_zero(3, 1.0, out.clone(), |_| 0.0, &b, 8.0, &GreenConfig::default()).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
        let s = green_solve_nonzero(3, 1.0, 1, out, |_| 0.0, &b, 5.0, &GreenConfig::default()).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
    }

    #[test]
    fn green_solution_solves_the_ode() {
        let out = Arc::new(RadialGrid::panels(3, 1.0, 4.0, 12, 16).unwrap());
        let b = SourceBound { c0: 1.0, delta: -2.0 };
        let cfg = GreenConfig::default();
        let s = green_solve_zero(3, 1.0, out.clone(), |z| z.powi(-2), &b, 12.0, &cfg).unwrap();
        let r = ode_residual(3, &s.mode, &s.u, &s.source).unwrap();
        assert!(r.max_abs() < 1e-8, "residual {}", r.max_abs());
        // u' from the kernel agrees with the spectral derivative of u
        let d = s.u.derivative().unwrap();
        for (a, b) in d.values().iter().zip(s.du.values()) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn uncertifiable_tail_is_rejected() {
        let out = Arc::new(RadialGrid::uniform_z(3, 1.0, 4.0, 31).unwrap());
        let b = SourceBound { c0: 1.0, delta: -2.0 };
        let r = green_solve_zero(3, 1.0, out, |z| z.powi(-2), &b, 4.2, &GreenConfig::default());
        assert!(matches!(r, Err(LabError::TailNotCertifiable(_))));
    }
}
