//! Radial toy: divisor a flat torus, beta|_D parallel with wedge ratios c_j.
//! Every quantity is a function of z alone, so each linear solve is the
//! radial fiber solve.

use crate::error::{LabError, Result};
use crate::fit::{end_exponent, power_tail, DecayReport};
use crate::mode_ode::{fiber_mode_solve, FiberSolution};
use crate::model_space::ModelParams;
use crate::radial::{RadialFunction, RadialGrid};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Horizontal and fiber coefficients of omega_C + beta + i ddbar(sum u_i).
#[derive(Debug, Clone)]
pub struct RadialMetricState {
    pub n: u32,
    /// c_1 .. c_{n-1}; c_0 = 1 implicitly.
    pub c: Vec<f64>,
    /// Accumulated horizontal addition sum du_i/dt.
    pub a: RadialFunction,
    /// Accumulated fiber addition sum d2u_i/dt2.
    pub b: RadialFunction,
    /// Total coefficient of the lambda z corrections applied so far.
    pub linear_coefficient: f64,
}

impl RadialMetricState {
    pub fn new(n: u32, c: Vec<f64>, grid: Arc<RadialGrid>) -> Result<Self> {
        let s = RadialMetricState {
            n,
            c,
            a: RadialFunction::zeros(grid.clone()),
            b: RadialFunction::zeros(grid),
            linear_coefficient: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(LabError::InvalidParameter(format!("n must be at least 2, got {}", self.n)));
        }
        if self.c.len() != self.n as usize - 1 {
            return Err(LabError::InvalidParameter(format!(
                "expected {} wedge ratios c_1..c_(n-1), got {}",
                self.n - 1,
                self.c.len()
            )));
        }
        if self.c.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter("wedge ratios must be finite".into()));
        }
        if self.a.grid().n() != self.n {
            return Err(LabError::InvalidParameter("grid dimension does not match n".into()));
        }
        self.horizontal_eigenvalues()?;
        Ok(())
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.a.grid()
    }

    /// Eigenvalues b_i of beta|_D against omega_D: prod (x + b_i) = H(x).
    pub fn horizontal_eigenvalues(&self) -> Result<Vec<f64>> {
        horizontal_eigenvalues(self.n, &self.c)
    }

    /// Adds (phi_t, phi_tt) to (A, B).
    pub fn with_potential(&self, phi_t: &RadialFunction, phi_tt: &RadialFunction) -> Result<Self> {
        Ok(RadialMetricState {
            n: self.n,
            c: self.c.clone(),
            a: self.a.add(phi_t)?,
            b: self.b.add(phi_tt)?,
            linear_coefficient: self.linear_coefficient,
        })
    }
}

/// Negated roots of H(x) = sum_j binom(n-1, j) c_j x^{n-1-j}.
pub fn horizontal_eigenvalues(n: u32, c: &[f64]) -> Result<Vec<f64>> {
    let m = n as usize - 1;
    if c.len() != m {
        return Err(LabError::InvalidParameter("wedge ratio count".into()));
    }
    if m == 1 {
        return Ok(vec![c[0]]);
    }
    // monic polynomial coefficients of x^{m-j}
    let coef: Vec<f64> = (1..=m).map(|j| binomial(m as u32, j as u32) * c[j - 1]).collect();
    let mut comp = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        comp[(0, j)] = -coef[j];
    }
    for i in 1..m {
        comp[(i, i - 1)] = 1.0;
    }
    let roots = comp.complex_eigenvalues();
    let scale = 1.0 + coef.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = Vec::with_capacity(m);
    for r in roots.iter() {
        if r.im.abs() > 1e-9 * scale {
            return Err(LabError::InvalidParameter(format!(
                "wedge ratios {c:?} are not realised by a real (1,1)-form (complex root {r})"
            )));
        }
        out.push(-r.re);
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

/// F = 1 - (1 + n z^{n-1} B) sum_j binom(n-1, j) (z+A)^{n-1-j} c_j / z^{n-1},
/// written as -(h + b + h b) with h and b evaluated without cancellation.
pub fn ma_ratio_at(n: u32, c: &[f64], z: f64, a: f64, b: f64) -> f64 {
    let m = n - 1;
    let s = a / z;
    let mut h = (m as f64 * s.ln_1p()).exp_m1();
    let mut zp = 1.0;
    for j in 1..=m {
        zp /= z;
        h += binomial(m, j) * (1.0 + s).powi((m - j) as i32) * c[j as usize - 1] * zp;
    }
    let bb = n as f64 * z.powi(m as i32) * b;
    -(h + bb + h * bb)
}

/// Rounding-error bound for `ma_ratio_at`: a few ulps of the summed magnitudes.
pub fn ma_ratio_roundoff(n: u32, c: &[f64], z: f64, a: f64, b: f64) -> f64 {
    let m = n - 1;
    let s = a / z;
    let mut h = (m as f64 * s.ln_1p()).exp_m1().abs();
    let mut zp = 1.0;
    for j in 1..=m {
        zp /= z;
        h += (binomial(m, j) * (1.0 + s).powi((m - j) as i32) * c[j as usize - 1] * zp).abs();
    }
    let bb = (n as f64 * z.powi(m as i32) * b).abs();
    8.0 * f64::EPSILON * (h + bb + h * bb)
}

/// (dF/dA, dF/dB) at one point.
pub fn ma_ratio_partials(n: u32, c: &[f64], z: f64, a: f64, b: f64) -> (f64, f64) {
    let m = n - 1;
    let x = z + a;
    let (mut hx, mut dhx) = (0.0, 0.0);
    for j in 0..=m {
        let cj = if j == 0 { 1.0 } else { c[j as usize - 1] };
        let k = (m - j) as i32;
        hx += binomial(m, j) * cj * x.powi(k);
        if k > 0 {
            dhx += binomial(m, j) * cj * k as f64 * x.powi(k - 1);
        }
    }
    let zm = z.powi(m as i32);
    let fiber = 1.0 + n as f64 * zm * b;
    (-dhx / zm * fiber, -hx / zm * n as f64 * zm)
}

/// First z where the composite form fails to be positive, if any.
pub fn positivity_violation(state: &RadialMetricState) -> Result<Option<(f64, String)>> {
    let eig = state.horizontal_eigenvalues()?;
    let n = state.n;
    for ((&z, &a), &b) in state.a.z().iter().zip(state.a.values()).zip(state.b.values()) {
        for &bi in &eig {
            if !(z + a + bi > 0.0) {
                return Ok(Some((z, format!("horizontal eigenvalue z + A + b_i = {}", z + a + bi))));
            }
        }
        let fiber = 1.0 + n as f64 * z.powi(n as i32 - 1) * b;
        if !(fiber > 0.0) {
            return Ok(Some((z, format!("fiber factor 1 + n z^(n-1) B = {fiber}"))));
        }
    }
    Ok(None)
}

pub fn ma_ratio(state: &RadialMetricState) -> Result<RadialFunction> {
    if let Some((z, detail)) = positivity_violation(state)? {
        return Err(LabError::Degenerate { z, detail });
    }
    state.a.zip_map(&state.b, |z, a, b| ma_ratio_at(state.n, &state.c, z, a, b))
}

/// The displayed sum sum_{j=1}^{n} (n-j)/(n z^j) c_j (c_n contributes nothing).
pub fn f0_displayed_sum(state: &RadialMetricState) -> Result<RadialFunction> {
    if state.a.max_abs() != 0.0 || state.b.max_abs() != 0.0 {
        return Err(LabError::InvalidParameter("displayed F0 sum needs A = B = 0".into()));
    }
    let n = state.n;
    Ok(state.a.map(|z, _| {
        (1..n).map(|j| (n - j) as f64 / (n as f64 * z.powi(j as i32)) * state.c[j as usize - 1]).sum()
    }))
}

/// Coefficient of z^{-1} in F0: (determinant expansion, displayed sum).
pub fn f0_leading_coefficients(n: u32, c: &[f64]) -> (f64, f64) {
    let c1 = c.first().copied().unwrap_or(0.0);
    (-binomial(n - 1, 1) * c1, (n as f64 - 1.0) / n as f64 * c1)
}

/// (du/dt, d2u/dt2) from u' and u'' = n z^{n-1} f.
fn t_derivatives_from(n: u32, du: &RadialFunction, f: &RadialFunction) -> Result<(RadialFunction, RadialFunction)> {
    let nf = n as f64;
    let ut = du.map(|z, d| d / (nf * z.powi(n as i32 - 1)));
    let utt = du.zip_map(f, |z, d, fv| (fv - (nf - 1.0) * d / (nf * z.powi(n as i32))) / (nf * z.powi(n as i32 - 1)))?;
    Ok((ut, utt))
}

/// One linear step: solve Delta u = f with declared order delta and update the state.
pub fn linear_step(state: &RadialMetricState, f: &RadialFunction, delta: f64) -> Result<(FiberSolution, RadialMetricState)> {
    let sol = fiber_mode_solve(state.n, f, delta)?;
    let (ut, utt) = t_derivatives_from(state.n, &sol.du, f)?;
    let next = state.with_potential(&ut, &utt)?;
    Ok((sol, next))
}

#[derive(Debug, Clone)]
pub struct IterationResult {
    /// F_0 .. F_m.
    pub f: Vec<RadialFunction>,
    /// u_1 .. u_m with their derivatives and limit choices.
    pub u: Vec<FiberSolution>,
    /// state_0 .. state_m.
    pub states: Vec<RadialMetricState>,
}

/// Declared order of F_j used to pick the limits of the linear solve: -(j+1).
pub fn declared_order(j: usize) -> f64 {
    -(j as f64 + 1.0)
}

/// F_0 .. F_m of U_j = U_{j-1} + u_j with Delta u_j = F_{j-1}.
pub fn iterate(state0: &RadialMetricState, steps: usize) -> Result<IterationResult> {
    state0.validate()?;
    if steps > state0.n as usize + 2 {
        return Err(LabError::InvalidParameter(format!("at most n + 2 = {} steps", state0.n + 2)));
    }
    let mut f = vec![ma_ratio(state0)?];
    let mut states = vec![state0.clone()];
    let mut u = Vec::with_capacity(steps);
    for j in 1..=steps {
        let (sol, next) = linear_step(&states[j - 1], &f[j - 1], declared_order(j - 1))?;
        f.push(ma_ratio(&next)?);
        states.push(next);
        u.push(sol);
    }
    Ok(IterationResult { f, u, states })
}

/// Decay fits of F_0..F_m over [lo, hi] against targets -(j+1).
pub fn decay_reports(f: &[RadialFunction], lo: f64, hi: f64) -> Result<Vec<DecayReport>> {
    f.iter()
        .enumerate()
        .map(|(j, fj)| DecayReport::fit_on(j, fj, lo, hi, declared_order(j)))
        .collect()
}

/// |grad u| = |u'| / (sqrt(n) z^{(n-1)/2}).
pub fn gradient_norm(n: u32, du: &RadialFunction) -> RadialFunction {
    let nf = n as f64;
    du.map(|z, d| d.abs() / (nf.sqrt() * z.powf(0.5 * (nf - 1.0))))
}

/// Residual u'' - n z^{n-1} f in the weighted L2 norm of the grid quadrature,
/// relative to the same norm of n z^{n-1} f.
pub fn linear_step_residual(n: u32, sol: &FiberSolution, f: &RadialFunction) -> Result<f64> {
    let d2 = sol.du.derivative()?;
    let nf = n as f64;
    let rhs = f.map(|z, v| nf * z.powi(n as i32 - 1) * v);
    let diff = d2.sub(&rhs)?;
    let num = diff.map(|_, v| v * v).integral().sqrt();
    let den = rhs.map(|_, v| v * v).integral().sqrt();
    Ok(if den == 0.0 { num } else { num / den })
}

/// Certified end integral int_{z_lo}^inf n z^{n-1} F dz (grid quadrature plus a power tail).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndIntegral {
    pub value: f64,
    pub tail: f64,
    pub tail_exponent: f64,
    /// rel_tol times the integral of |integrand| and |tail|, plus the
    /// integrated rounding bound of F.
    pub tolerance: f64,
}

/// Samples used to fit the tail of the end integrand.
const END_TAIL_SAMPLES: usize = 24;

/// End integral of F with a pointwise error bound `f_err` (zeros when F is exact data).
pub fn end_integral(f: &RadialFunction, f_err: &RadialFunction, n: u32, rel_tol: f64) -> Result<EndIntegral> {
    let nf = n as f64;
    let weight = |z: f64| nf * z.powi(n as i32 - 1);
    let g = f.map(|z, v| weight(z) * v);
    let body = g.integral();
    let abs_body = g.map(|_, v| v.abs()).integral();
    let rounding = f_err.map(|z, e| weight(z) * e.abs()).integral();
    let (z, v) = (g.z(), g.values());
    let last = v[v.len() - 1];
    let (tail, p) = if last == 0.0 {
        (0.0, f64::NEG_INFINITY)
    } else {
        let p = end_exponent(z, v, END_TAIL_SAMPLES.min(z.len())).ok_or(LabError::NotIntegrable { order: f64::NAN })?;
        let upper = g.grid().upper();
        let t = power_tail(upper, last * (upper / z[z.len() - 1]).powf(p), p)
            .ok_or(LabError::NotIntegrable { order: p - nf + 1.0 })?;
        (t, p)
    };
    Ok(EndIntegral {
        value: body + tail,
        tail,
        tail_exponent: p,
        tolerance: rel_tol * (abs_body + tail.abs()) + rounding,
    })
}

/// The constant C = int_end ((omega_C + eta)^n - omega_C^n) = -Vol_D * fiber * int n z^{n-1} F dz,
/// with its tolerance.
pub fn end_constant(state: &RadialMetricState, params: &ModelParams, rel_tol: f64) -> Result<(f64, f64)> {
    let f = ma_ratio(state)?;
    let err = state.a.zip_map(&state.b, |z, a, b| ma_ratio_roundoff(state.n, &state.c, z, a, b))?;
    let e = end_integral(&f, &err, params.n, rel_tol)?;
    let w = params.base_volume * params.fiber_normalization;
    Ok((-w * e.value, w * e.tolerance))
}

/// Root of 0 = lambda * Vol_D * fiber + C.
pub fn lambda_from_constant(constant: f64, params: &ModelParams) -> f64 {
    -constant / (params.base_volume * params.fiber_normalization)
}

pub fn compatibility_lambda(state: &RadialMetricState, params: &ModelParams, rel_tol: f64) -> Result<f64> {
    let (c, _) = end_constant(state, params, rel_tol)?;
    Ok(lambda_from_constant(c, params))
}

/// Smooth step: 0 for s <= 0, 1 for s >= 1, with its first two derivatives.
pub fn smooth_step(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    // chi = p(s) / (p(s) + p(1-s)), p(s) = exp(-1/s)
    let p = |x: f64| (-1.0 / x).exp();
    let dp = |x: f64| p(x) / (x * x);
    let d2p = |x: f64| p(x) * (1.0 - 2.0 * x) / x.powi(4);
    let (a, b) = (p(s), p(1.0 - s));
    let (da, db) = (dp(s), -dp(1.0 - s));
    let (d2a, d2b) = (d2p(s), d2p(1.0 - s));
    let q = a + b;
    let dq = da + db;
    let d2q = d2a + d2b;
    let chi = a / q;
    let dchi = (da * q - a * dq) / (q * q);
    let d2chi = (d2a * q - a * d2q) / (q * q) - 2.0 * dq * dchi / q;
    (chi, dchi, d2chi)
}

/// Where the lambda z correction is switched on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlueWindow {
    pub start: f64,
    pub end: f64,
}

impl GlueWindow {
    /// [z_lo, 2 z_lo] for a state on a grid starting at z_lo.
    pub fn default_for(grid: &RadialGrid) -> Self {
        GlueWindow { start: grid.lower(), end: 2.0 * grid.lower() }
    }
}

/// Adds lambda * chi(z) * z, chi the smooth step across `glue`:
/// A += u'/(n z^{n-1}), B += (u'' - (n-1) u'/z)/(n z^{n-1})^2.
/// Beyond the window this is lambda z exactly, whose Laplacian vanishes.
pub fn apply_linear_z(state: &RadialMetricState, lambda: f64, glue: GlueWindow) -> Result<RadialMetricState> {
    if !lambda.is_finite() {
        return Err(LabError::InvalidParameter("lambda must be finite".into()));
    }
    if lambda == 0.0 {
        return Ok(state.clone());
    }
    if !(glue.end > glue.start) {
        return Err(LabError::Ordering("glue window must have positive width".into()));
    }
    let n = state.n as i32;
    let nf = n as f64;
    let w = glue.end - glue.start;
    let derivs = |z: f64| {
        let (chi, d1, d2) = smooth_step((z - glue.start) / w);
        let up = lambda * (d1 / w * z + chi);
        let upp = lambda * (d2 / (w * w) * z + 2.0 * d1 / w);
        (up, upp)
    };
    let ut = state.a.map(|z, _| derivs(z).0 / (nf * z.powi(n - 1)));
    let utt = state.a.map(|z, _| {
        let (up, upp) = derivs(z);
        (upp - (nf - 1.0) * up / z) / (nf * z.powi(n - 1)).powi(2)
    });
    let mut next = state.with_potential(&ut, &utt)?;
    next.linear_coefficient += lambda;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub lambda: f64,
    /// End constant C before the correction.
    pub constant_before: f64,
    /// Recomputed end constant after the correction.
    pub constant_after: f64,
    pub tolerance: f64,
    pub passes: usize,
}

/// Solve the linear lambda equation, apply lambda chi z, and repeat on the
/// updated state until the recomputed end constant is within tolerance.
pub fn enforce_compatibility(
    state: &RadialMetricState,
    params: &ModelParams,
    glue: GlueWindow,
    rel_tol: f64,
    max_passes: usize,
) -> Result<(RadialMetricState, CompatibilityReport)> {
    let (c0, _) = end_constant(state, params, rel_tol)?;
    let mut current = state.clone();
    let mut c = c0;
    let mut total = 0.0;
    let mut tol = f64::INFINITY;
    for pass in 1..=max_passes {
        let lambda = lambda_from_constant(c, params);
        current = apply_linear_z(&current, lambda, glue)?;
        total += lambda;
        let (cn, t) = end_constant(&current, params, rel_tol)?;
        c = cn;
        tol = t;
        if c.abs() <= tol {
            return Ok((
                current,
                CompatibilityReport { lambda: total, constant_before: c0, constant_after: c, tolerance: tol, passes: pass },
            ));
        }
    }
    Ok((
        current,
        CompatibilityReport { lambda: total, constant_before: c0, constant_after: c, tolerance: tol, passes: max_passes },
    ))
}

/// One more linear solve of F with declared order -(n+1); returns the new state,
/// its F and the decay fit against -(n+2).
pub fn final_step(state: &RadialMetricState, lo: f64, hi: f64) -> Result<(RadialMetricState, RadialFunction, DecayReport)> {
    let f = ma_ratio(state)?;
    let n = state.n;
    let (_, next) = linear_step(state, &f, -(n as f64 + 1.0))?;
    let f_next = ma_ratio(&next)?;
    let report = DecayReport::fit_on(n as usize + 2, &f_next, lo, hi, -(n as f64 + 2.0))?;
    Ok((next, f_next, report))
}

/// Pointwise |omega - omega_C| / |omega_C|: the largest relative eigenvalue change.
pub fn metric_closeness(state: &RadialMetricState) -> Result<RadialFunction> {
    let eig = state.horizontal_eigenvalues()?;
    let n = state.n as i32;
    let nf = n as f64;
    state.a.zip_map(&state.b, |z, a, b| {
        let h = eig.iter().fold(0.0f64, |m, bi| m.max(((a + bi) / z).abs()));
        h.max((nf * z.powi(n - 1) * b).abs())
    })
}

/// z-order p of a decay converted to the geodesic radius r ~ z^{(n+1)/2}.
pub fn z_order_to_r_order(n: u32, p: f64) -> f64 {
    2.0 * p / (n as f64 + 1.0)
}

/// Standard toy grid on [5, 200].
pub fn toy_grid(n: u32) -> Result<Arc<RadialGrid>> {
    Ok(Arc::new(RadialGrid::panels(n, 5.0, 200.0, 48, 16)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(c: Vec<f64>) -> RadialMetricState {
        RadialMetricState::new(3, c, toy_grid(3).unwrap()).unwrap()
    }

    #[test]
    fn zero_state_is_fixed() {
        let s = toy(vec![0.0, 0.0]);
        let r = iterate(&s, 5).unwrap();
        assert!(r.f.iter().all(|f| f.max_abs() == 0.0));
        assert!(r.u.iter().all(|u| u.u.max_abs() == 0.0));
    }

    #[test]
    fn ratio_examples() {
        let g = toy_grid(3).unwrap();
        let mut s = RadialMetricState::new(3, vec![0.0, 0.0], g.clone()).unwrap();
        let k = 2.5;
        s.b = RadialFunction::from_fn(g.clone(), |z| (k - 1.0) / (3.0 * z * z));
        let f = ma_ratio(&s).unwrap();
        assert!(f.values().iter().all(|v| (v - (1.0 - k)).abs() < 1e-14));
        assert!((ma_ratio_at(3, &[1.0, 1.0], 10.0, 0.0, 0.0) + 0.21).abs() < 1e-15);
    }

    #[test]
    fn eigenvalues_of_the_standard_toy() {
        let e = horizontal_eigenvalues(3, &[0.3, 0.05]).unwrap();
        assert!((e[0] - 0.1).abs() < 1e-12 && (e[1] - 0.5).abs() < 1e-12);
        assert!(horizontal_eigenvalues(3, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn degeneration_reported() {
        let g = toy_grid(3).unwrap();
        let mut s = RadialMetricState::new(3, vec![0.0, 0.0], g.clone()).unwrap();
        s.b = RadialFunction::from_fn(g, |z| if z > 50.0 { -1.0 / (3.0 * z * z) } else { 0.0 });
        match ma_ratio(&s) {
            Err(LabError::Degenerate { z, .. }) => assert!(z > 50.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn displayed_sum_and_leading_coefficients() {
        let s = toy(vec![0.3, 0.05]);
        let p = f0_displayed_sum(&s).unwrap();
        let d = ma_ratio(&s).unwrap();
        for ((a, b), z) in p.values().iter().zip(d.values()).zip(s.a.z()) {
            // both Theta(1/z)
            assert!((a * z - 0.2).abs() < 0.05 && (b * z + 0.6).abs() < 0.1);
        }
        let (l0, l1) = f0_leading_coefficients(3, &[0.3, 0.05]);
        assert!((l0 + 0.6).abs() < 1e-15 && (l1 - 0.2).abs() < 1e-15);
        assert!(f0_displayed_sum(&toy(vec![0.0, 0.0])).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn linear_z_has_no_laplacian_beyond_the_glue() {
        let s = toy(vec![0.3, 0.05]);
        let glue = GlueWindow::default_for(s.grid());
        let t = apply_linear_z(&s, 0.7, glue).unwrap();
        let n = 3.0;
        for ((&z, a), b) in t.a.z().iter().zip(t.a.values()).zip(t.b.values()) {
            if z > glue.end {
                assert!((a - 0.7 / (n * z * z)).abs() < 1e-16);
                assert!((b - 0.7 * (1.0 - n) / (n * n) * z.powi(-5)).abs() < 1e-18);
                let trace = (n - 1.0) * a / z + n * z * z * b;
                assert!(trace.abs() < 1e-16 * (a / z).abs().max(1e-300) * 10.0);
            }
        }
        assert!(apply_linear_z(&s, 0.0, glue).unwrap().a.max_abs() == 0.0);
    }

    #[test]
    fn smooth_step_derivatives_match_differences() {
        for s in [0.1, 0.3, 0.5, 0.77, 0.95] {
            let h = 1e-5;
            let (_, d1, d2) = smooth_step(s);
            let fd1 = (smooth_step(s + h).0 - smooth_step(s - h).0) / (2.0 * h);
            let fd2 = (smooth_step(s + h).0 - 2.0 * smooth_step(s).0 + smooth_step(s - h).0) / (h * h);
            assert!((d1 - fd1).abs() < 1e-7, "{s}");
            assert!((d2 - fd2).abs() < 1e-4, "{s}");
        }
    }

    #[test]
    fn lambda_linear_solve() {
        let p = ModelParams::default();
        assert_eq!(lambda_from_constant(2.0, &p), -2.0);
        let s = toy(vec![0.0, 0.0]);
        assert_eq!(compatibility_lambda(&s, &p, 1e-13).unwrap(), 0.0);
    }

    #[test]
    fn partials_match_differences() {
        let c = [0.3, 0.05];
        for (z, a, b) in [(5.0, 0.2, 1e-3), (30.0, -0.4, 1e-6), (100.0, 1.0, -1e-7)] {
            let (fa, fb) = ma_ratio_partials(3, &c, z, a, b);
            let ha = 1e-6;
            let hb = 1e-6 / (3.0 * z * z);
            let ga = (ma_ratio_at(3, &c, z, a + ha, b) - ma_ratio_at(3, &c, z, a - ha, b)) / (2.0 * ha);
            let gb = (ma_ratio_at(3, &c, z, a, b + hb) - ma_ratio_at(3, &c, z, a, b - hb)) / (2.0 * hb);
            assert!((fa - ga).abs() < 1e-7 * fa.abs().max(1e-3));
            assert!((fb - gb).abs() < 1e-6 * fb.abs());
        }
    }
}
