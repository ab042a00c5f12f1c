//! Damped Newton for the radial Monge-Ampere equation
//! (omega + i ddbar phi)^n = R* omega_C^n on a truncated window with
//! phi = 0 at both ends. Derivatives use fourth-order stencils on a uniform
//! z-grid; the linear step is a banded LU solve.

use crate::decay_iteration::{ma_ratio_at, ma_ratio_partials, RadialMetricState};
use crate::error::{LabError, Result};
use crate::fit::DecayReport;
use crate::radial::{fornberg_weights, stencil_start, RadialFunction, RadialGrid};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub z_min: f64,
    pub z_max: f64,
    /// Number of uniform grid points including both ends.
    pub points: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest damping factor tried before giving up.
    pub min_damping: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { z_min: 5.0, z_max: 50.0, points: 451, tol: 1e-10, max_iter: 12, min_damping: 1.0 / 1024.0 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_min >= 1.0 && self.z_max > self.z_min && self.z_max.is_finite()) {
            return Err(LabError::InvalidParameter(format!("window [{}, {}] needs 1 <= z_min < z_max", self.z_min, self.z_max)));
        }
        if !(self.tol > 0.0) {
            return Err(LabError::InvalidParameter("tolerance must be positive".into()));
        }
        if self.points < 8 {
            return Err(LabError::GridTooCoarse(format!("{} points", self.points)));
        }
        if !(self.min_damping > 0.0 && self.min_damping <= 1.0) {
            return Err(LabError::InvalidParameter("min_damping must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn grid(&self, n: u32) -> Result<Arc<RadialGrid>> {
        Ok(Arc::new(RadialGrid::uniform_z(n, self.z_min, self.z_max, self.points)?))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Max residual before the first step and after every accepted step.
    pub residuals: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub damping: Vec<f64>,
}

impl ConvergenceTrace {
    /// Largest r_{k+1} / r_k^2 over steps starting below 0.1 and ending
    /// above `floor`; None when no such step exists.
    pub fn quadratic_constant(&self, floor: f64) -> Option<f64> {
        self.residuals
            .windows(2)
            .filter(|w| w[0] < 0.1 && w[0] > 0.0 && w[1] > floor)
            .map(|w| w[1] / (w[0] * w[0]))
            .fold(None, |m: Option<f64>, k| Some(m.map_or(k, |v| v.max(k))))
    }
}

/// Fourth-order first and second derivative stencils on a uniform grid.
struct Stencils {
    /// (start, weights) per row for d/dz and d2/dz2.
    d1: Vec<(usize, Vec<f64>)>,
    d2: Vec<(usize, Vec<f64>)>,
}

impl Stencils {
    fn new(z: &[f64]) -> Self {
        let len = z.len();
        let build = |m: usize| {
            (0..len)
                .map(|i| {
                    let width = if (i >= 2 && i + 2 < len) || m == 1 { 5 } else { 6 };
                    let s = stencil_start(i, len, width);
                    (s, fornberg_weights(z[i], &z[s..s + width], m))
                })
                .collect()
        };
        Stencils { d1: build(1), d2: build(2) }
    }

    fn apply(rows: &[(usize, Vec<f64>)], f: &[f64]) -> Vec<f64> {
        rows.iter().map(|(s, w)| w.iter().enumerate().map(|(k, wk)| wk * f[s + k]).sum()).collect()
    }
}

/// The discrete problem: state coefficients resampled on the Newton grid.
pub struct MaProblem {
    n: u32,
    c: Vec<f64>,
    grid: Arc<RadialGrid>,
    a: Vec<f64>,
    b: Vec<f64>,
    target: Vec<f64>,
    stencils: Stencils,
}

impl MaProblem {
    pub fn new(state: &RadialMetricState, grid: Arc<RadialGrid>, target: Option<&[f64]>) -> Result<Self> {
        state.validate()?;
        let a = state.a.resample(grid.clone())?.into_values();
        let b = state.b.resample(grid.clone())?.into_values();
        let target = match target {
            Some(t) if t.len() == grid.len() => t.to_vec(),
            Some(_) => return Err(LabError::InvalidParameter("target length does not match grid".into())),
            None => vec![1.0; grid.len()],
        };
        let stencils = Stencils::new(grid.z());
        Ok(MaProblem { n: state.n, c: state.c.clone(), grid, a, b, target, stencils })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    /// (phi_t, phi_tt) at every grid point.
    fn t_derivatives(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d1 = Stencils::apply(&self.stencils.d1, phi);
        let d2 = Stencils::apply(&self.stencils.d2, phi);
        let nf = self.n as f64;
        let z = self.grid.z();
        let n1 = self.n as i32 - 1;
        let pt = (0..z.len()).map(|i| d1[i] / (nf * z[i].powi(n1))).collect();
        let ptt = (0..z.len()).map(|i| (d2[i] - (nf - 1.0) * d1[i] / z[i]) / (nf * z[i].powi(n1)).powi(2)).collect();
        (pt, ptt)
    }

    /// Volume ratio (omega + i ddbar phi)^n / omega_C^n at every grid point.
    pub fn ratio(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let (pt, ptt) = self.t_derivatives(phi);
        let eig = crate::decay_iteration::horizontal_eigenvalues(self.n, &self.c)?;
        let z = self.grid.z();
        let nf = self.n as f64;
        (0..z.len())
            .map(|i| {
                let (a, b) = (self.a[i] + pt[i], self.b[i] + ptt[i]);
                if eig.iter().any(|bi| !(z[i] + a + bi > 0.0)) || !(1.0 + nf * z[i].powi(self.n as i32 - 1) * b > 0.0) {
                    return Err(LabError::Degenerate { z: z[i], detail: "composite metric not positive".into() });
                }
                Ok(1.0 - ma_ratio_at(self.n, &self.c, z[i], a, b))
            })
            .collect()
    }

    /// 1 - ratio / R*, i.e. F of the composite state when R* = 1.
    pub fn residual(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let (pt, ptt) = self.t_derivatives(phi);
        let eig = crate::decay_iteration::horizontal_eigenvalues(self.n, &self.c)?;
        let z = self.grid.z();
        let nf = self.n as f64;
        (0..z.len())
            .map(|i| {
                let (a, b) = (self.a[i] + pt[i], self.b[i] + ptt[i]);
                if eig.iter().any(|bi| !(z[i] + a + bi > 0.0)) || !(1.0 + nf * z[i].powi(self.n as i32 - 1) * b > 0.0) {
                    return Err(LabError::Degenerate { z: z[i], detail: "composite metric not positive".into() });
                }
                let f = ma_ratio_at(self.n, &self.c, z[i], a, b);
                let t = self.target[i];
                // 1 - (1 - f)/t written without cancellation when t = 1
                Ok(if t == 1.0 { f } else { (t - 1.0 + f) / t })
            })
            .collect()
    }

    /// Jacobian rows of the residual at the interior points, as a band matrix
    /// over the interior unknowns.
    fn jacobian(&self, phi: &[f64]) -> Band {
        let (pt, ptt) = self.t_derivatives(phi);
        let z = self.grid.z();
        let len = z.len();
        let m = len - 2;
        let nf = self.n as f64;
        let n1 = self.n as i32 - 1;
        let mut band = Band::new(m, 4, 4);
        for i in 1..len - 1 {
            let (fa, fb) = ma_ratio_partials(self.n, &self.c, z[i], self.a[i] + pt[i], self.b[i] + ptt[i]);
            let q = nf * z[i].powi(n1);
            let inv_t = 1.0 / self.target[i];
            let (s1, w1) = &self.stencils.d1[i];
            let (s2, w2) = &self.stencils.d2[i];
            for (k, w) in w1.iter().enumerate() {
                let col = s1 + k;
                if col >= 1 && col < len - 1 {
                    band.add(i - 1, col - 1, inv_t * (fa * w / q - fb * (nf - 1.0) * w / z[i] / (q * q)));
                }
            }
            for (k, w) in w2.iter().enumerate() {
                let col = s2 + k;
                if col >= 1 && col < len - 1 {
                    band.add(i - 1, col - 1, inv_t * fb * w / (q * q));
                }
            }
        }
        band
    }

    /// J v for interior perturbations v (zero at the ends).
    pub fn jacobian_apply(&self, phi: &[f64], v: &[f64]) -> Vec<f64> {
        let band = self.jacobian(phi);
        let len = self.grid.len();
        let mut out = vec![0.0; len];
        for i in 0..len - 2 {
            out[i + 1] = band.row_dot(i, &v[1..len - 1]);
        }
        out
    }
}

/// Square band matrix with kl sub- and ku super-diagonals, stored densely by
/// row with room for pivoting fill-in.
struct Band {
    m: usize,
    kl: usize,
    ku: usize,
    rows: Vec<Vec<f64>>,
}

impl Band {
    fn new(m: usize, kl: usize, ku: usize) -> Self {
        Band { m, kl, ku, rows: vec![vec![0.0; m]; m] }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.rows[i][j] += v;
    }

    fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku + 1).min(self.m);
        (lo..hi).map(|j| self.rows[i][j] * v[j]).sum()
    }

    /// Gaussian elimination with partial pivoting restricted to the band.
    fn solve(mut self, mut rhs: Vec<f64>) -> Result<Vec<f64>> {
        let m = self.m;
        let reach = self.kl + self.ku;
        for k in 0..m {
            let last = (k + self.kl).min(m - 1);
            let p = (k..=last).max_by(|&a, &b| self.rows[a][k].abs().partial_cmp(&self.rows[b][k].abs()).unwrap()).unwrap();
            if self.rows[p][k] == 0.0 || !self.rows[p][k].is_finite() {
                return Err(LabError::Singular(k));
            }
            self.rows.swap(k, p);
            rhs.swap(k, p);
            let cols = (k + reach + 1).min(m);
            for i in k + 1..=last {
                let f = self.rows[i][k] / self.rows[k][k];
                if f == 0.0 {
                    continue;
                }
                for j in k..cols {
                    self.rows[i][j] -= f * self.rows[k][j];
                }
                rhs[i] -= f * rhs[k];
            }
        }
        let mut x = vec![0.0; m];
        for k in (0..m).rev() {
            let cols = (k + reach + 1).min(m);
            let s: f64 = (k + 1..cols).map(|j| self.rows[k][j] * x[j]).sum();
            x[k] = (rhs[k] - s) / self.rows[k][k];
        }
        Ok(x)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// F(state + phi) on phi's grid.
pub fn residual(state: &RadialMetricState, phi: &RadialFunction) -> Result<RadialFunction> {
    let p = MaProblem::new(state, phi.grid().clone(), None)?;
    RadialFunction::new(phi.grid().clone(), p.residual(phi.values())?)
}

/// Newton iteration on a prepared problem, starting from `phi0` (ends must be 0).
pub fn newton_iterate(problem: &MaProblem, phi0: Vec<f64>, cfg: &NewtonConfig) -> Result<(Vec<f64>, ConvergenceTrace)> {
    cfg.validate()?;
    let len = problem.grid.len();
    let mut phi = phi0;
    let mut trace = ConvergenceTrace::default();
    let interior = |r: &[f64]| max_abs(&r[1..len - 1]);
    let mut res = problem.residual(&phi)?;
    let mut rn = interior(&res);
    trace.residuals.push(rn);
    for it in 0..cfg.max_iter {
        if rn < cfg.tol {
            return Ok((phi, trace));
        }
        let band = problem.jacobian(&phi);
        let step = band.solve(res[1..len - 1].iter().map(|v| -v).collect())?;
        let mut theta = 1.0;
        loop {
            let mut trial = phi.clone();
            for i in 0..len - 2 {
                trial[i + 1] += theta * step[i];
            }
            // a step that loses positivity or raises the residual is halved
            match problem.residual(&trial) {
                Ok(r) if interior(&r) < rn || interior(&r) < cfg.tol => {
                    rn = interior(&r);
                    res = r;
                    phi = trial;
                    trace.residuals.push(rn);
                    trace.step_norms.push(theta * max_abs(&step));
                    trace.damping.push(theta);
                    break;
                }
                _ => {
                    theta *= 0.5;
                    if theta < cfg.min_damping {
                        return Err(LabError::DampingExhausted { iteration: it, residual: rn });
                    }
                }
            }
        }
    }
    if rn < cfg.tol {
        Ok((phi, trace))
    } else {
        Err(LabError::NewtonNotConverged { iterations: cfg.max_iter, residual: rn })
    }
}

/// Solve F(state + phi) = 0 on the configured window from phi = 0.
pub fn newton_solve(state: &RadialMetricState, cfg: &NewtonConfig) -> Result<(RadialFunction, ConvergenceTrace)> {
    cfg.validate()?;
    let grid = cfg.grid(state.n)?;
    let problem = MaProblem::new(state, grid.clone(), None)?;
    let (phi, trace) = newton_iterate(&problem, vec![0.0; grid.len()], cfg)?;
    Ok((RadialFunction::new(grid, phi)?, trace))
}

/// Fits of |phi| and of the size of i ddbar phi relative to omega_C,
/// max(|phi_t|/z, n z^{n-1} |phi_tt|), over [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiDecay {
    /// None when phi vanishes identically.
    pub phi: Option<DecayReport>,
    pub ddbar: Option<DecayReport>,
    pub energy: f64,
}

pub fn ddbar_size(n: u32, phi: &RadialFunction) -> Result<RadialFunction> {
    let st = Stencils::new(phi.z());
    let d1 = Stencils::apply(&st.d1, phi.values());
    let d2 = Stencils::apply(&st.d2, phi.values());
    let nf = n as f64;
    let n1 = n as i32 - 1;
    let vals = phi
        .z()
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let q = nf * z.powi(n1);
            let pt = d1[i] / q;
            let ptt = (d2[i] - (nf - 1.0) * d1[i] / z) / (q * q);
            (pt / z).abs().max((q * ptt).abs())
        })
        .collect();
    RadialFunction::new(phi.grid().clone(), vals)
}

pub fn phi_decay_report(n: u32, phi: &RadialFunction, lo: f64, hi: f64, target: f64) -> Result<PhiDecay> {
    if phi.max_abs() == 0.0 {
        return Ok(PhiDecay { phi: None, ddbar: None, energy: 0.0 });
    }
    let dd = ddbar_size(n, phi)?;
    let st = Stencils::new(phi.z());
    let d1 = Stencils::apply(&st.d1, phi.values());
    let energy = RadialFunction::new(phi.grid().clone(), d1.iter().map(|v| v * v).collect())?.integral();
    Ok(PhiDecay {
        phi: Some(DecayReport::fit_on(0, phi, lo, hi, target)?),
        ddbar: Some(DecayReport::fit_on(1, &dd, lo, hi, target)?),
        energy,
    })
}

/// Target ratio R* = (omega + i ddbar phi*)^n / omega_C^n for a manufactured phi*.
pub fn manufactured_target(state: &RadialMetricState, phi_star: &RadialFunction) -> Result<Vec<f64>> {
    let p = MaProblem::new(state, phi_star.grid().clone(), None)?;
    p.ratio(phi_star.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decay_iteration::toy_grid;

    fn cfg() -> NewtonConfig {
        NewtonConfig { z_min: 5.0, z_max: 50.0, points: 181, ..Default::default() }
    }

    #[test]
    fn pure_model_gives_zero() {
        let s = RadialMetricState::new(3, vec![0.0, 0.0], toy_grid(3).unwrap()).unwrap();
        let (phi, trace) = newton_solve(&s, &cfg()).unwrap();
        assert_eq!(phi.max_abs(), 0.0);
        assert_eq!(trace.residuals, vec![0.0]);
        let r = phi_decay_report(3, &phi, 5.0, 50.0, -1.0).unwrap();
        assert!(r.phi.is_none());
    }

    #[test]
    fn constants_are_in_the_kernel() {
        let s = RadialMetricState::new(3, vec![0.0, 0.0], toy_grid(3).unwrap()).unwrap();
        let g = cfg().grid(3).unwrap();
        let phi = RadialFunction::from_fn(g, |_| 3.7);
        assert!(residual(&s, &phi).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn manufactured_solution_recovered() {
        let s = RadialMetricState::new(3, vec![0.3, 0.05], toy_grid(3).unwrap()).unwrap();
        let c = cfg();
        let g = c.grid(3).unwrap();
        let phi_star = RadialFunction::from_fn(g.clone(), |z| 0.5 * ((z - 5.0) * std::f64::consts::PI / 45.0).sin() * z);
        let target = manufactured_target(&s, &phi_star).unwrap();
        let p = MaProblem::new(&s, g.clone(), Some(&target)).unwrap();
        assert!(max_abs(&p.residual(phi_star.values()).unwrap()) < 1e-14);
        let (phi, trace) = newton_iterate(&p, vec![0.0; g.len()], &c).unwrap();
        let err = phi.iter().zip(phi_star.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-7 * phi_star.max_abs(), "err {err}, trace {trace:?}");
    }

    #[test]
    fn jacobian_matches_differences() {
        let s = RadialMetricState::new(3, vec![0.3, 0.05], toy_grid(3).unwrap()).unwrap();
        let g = cfg().grid(3).unwrap();
        let p = MaProblem::new(&s, g.clone(), None).unwrap();
        let phi: Vec<f64> = g.z().iter().map(|z| 0.01 * (z - 5.0) * (50.0 - z)).collect();
        let mut v: Vec<f64> = g.z().iter().map(|z| (0.3 * z).sin()).collect();
        let last = v.len() - 1;
        v[0] = 0.0;
        v[last] = 0.0;
        let jv = p.jacobian_apply(&phi, &v);
        let h = 1e-6;
        let plus: Vec<f64> = phi.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = phi.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let rp = p.residual(&plus).unwrap();
        let rm = p.residual(&minus).unwrap();
        let scale = max_abs(&jv);
        for i in 1..last {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            assert!((fd - jv[i]).abs() < 1e-5 * scale, "{i}: {fd} vs {}", jv[i]);
        }
    }

    #[test]
    fn band_solver_matches_dense() {
        let m = 12;
        let mut b = Band::new(m, 4, 4);
        let mut dense = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in i.saturating_sub(4)..(i + 5).min(m) {
                let v = ((i * 7 + j * 3) % 11) as f64 - 5.0 + if i == j { 0.5 } else { 0.0 };
                b.add(i, j, v);
                dense[i][j] = v;
            }
        }
        let x_true: Vec<f64> = (0..m).map(|i| i as f64 - 3.0).collect();
        let rhs: Vec<f64> = dense.iter().map(|r| r.iter().zip(&x_true).map(|(a, b)| a * b).sum()).collect();
        let x = b.solve(rhs).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
