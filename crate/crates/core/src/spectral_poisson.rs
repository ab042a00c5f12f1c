//! Poisson solves u = sum_k u_k psi_k over a surrogate eigenbasis of the
//! level set: real Fourier modes on the flat torus T^{2n-2} = (R/2 pi Z)^{2n-2}
//! times characters of the circle fiber, orthonormal for the normalized
//! measure (vol Y = 1). A mode with torus frequency m and fiber degree j has
//! lambda = |m|^2.

use crate::error::{LabError, Result};
use crate::fit::{fit_line, DecayReport};
use crate::mode_ode::{fiber_mode_solve, FundamentalPair, GreenConfig, GreenSolver, Mode, SourceBound};
use crate::model_space::mode_potential;
use crate::par;
use crate::radial::{RadialFunction, RadialGrid};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trig {
    One,
    Cos,
    Sin,
}

impl Trig {
    fn eval(self, phase: f64) -> f64 {
        match self {
            Trig::One => 1.0,
            Trig::Cos => SQRT_2 * phase.cos(),
            Trig::Sin => SQRT_2 * phase.sin(),
        }
    }
}

/// One real eigenfunction psi(x, theta) = T(m . x) S(j theta).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMode {
    pub torus: Vec<i32>,
    pub torus_trig: Trig,
    pub j: u32,
    pub fiber_trig: Trig,
    pub lambda: f64,
}

impl SurrogateMode {
    pub fn mode(&self) -> Mode {
        Mode { lambda: self.lambda, j: self.j }
    }

    pub fn eval(&self, x: &[f64], theta: f64) -> f64 {
        let phase: f64 = self.torus.iter().zip(x).map(|(m, xi)| *m as f64 * xi).sum();
        self.torus_trig.eval(phase) * self.fiber_trig.eval(self.j as f64 * theta)
    }
}

/// Lambda_k(z0) = lambda / z0 + n z0^{n-1} j^2.
pub fn level_eigenvalue(n: u32, lambda: f64, j: u32, z0: f64) -> f64 {
    let jf = j as f64;
    lambda / z0 + n as f64 * z0.powi(n as i32 - 1) * jf * jf
}

/// Torus frequency vectors with |m_i| <= cutoff whose first nonzero entry is positive.
fn half_lattice(dim: usize, cutoff: i32) -> Vec<Vec<i32>> {
    let side = (2 * cutoff + 1) as usize;
    let total = side.pow(dim as u32);
    let mut out = Vec::new();
    for idx in 0..total {
        let mut rem = idx;
        let mut m = vec![0i32; dim];
        for slot in m.iter_mut() {
            *slot = (rem % side) as i32 - cutoff;
            rem /= side;
        }
        if let Some(first) = m.iter().find(|v| **v != 0) {
            if *first > 0 {
                out.push(m);
            }
        }
    }
    out
}

/// Sorted surrogate spectrum with its tensor sampling of Y.
#[derive(Debug, Clone)]
pub struct SpectrumProvider {
    pub n: u32,
    pub torus_cutoff: i32,
    pub fiber_cutoff: u32,
    pub z0: f64,
    modes: Vec<SurrogateMode>,
    /// Sample points (x, theta) of the tensor grid.
    samples: Vec<(Vec<f64>, f64)>,
    /// psi_k at every sample, row-major by mode.
    table: Vec<f64>,
}

/// Samples per torus direction and along the fiber for the given cutoffs.
fn sampling(torus_cutoff: i32, fiber_cutoff: u32) -> (usize, usize) {
    (2 * torus_cutoff as usize + 1, 2 * fiber_cutoff as usize + 1)
}

fn tensor_samples(dim: usize, pt: usize, pf: usize) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::with_capacity(pt.pow(dim as u32) * pf);
    for idx in 0..pt.pow(dim as u32) {
        let mut rem = idx;
        let x: Vec<f64> = (0..dim)
            .map(|_| {
                let k = rem % pt;
                rem /= pt;
                2.0 * PI * k as f64 / pt as f64
            })
            .collect();
        for l in 0..pf {
            out.push((x.clone(), 2.0 * PI * l as f64 / pf as f64));
        }
    }
    out
}

impl SpectrumProvider {
    pub fn new(n: u32, torus_cutoff: i32, fiber_cutoff: u32, z0: f64) -> Result<Self> {
        if n < 2 {
            return Err(LabError::InvalidParameter(format!("n must be at least 2, got {n}")));
        }
        if torus_cutoff < 0 || !(z0 > 0.0) {
            return Err(LabError::InvalidParameter("cutoffs must be nonnegative and z0 positive".into()));
        }
        let dim = 2 * n as usize - 2;
        let mut torus = vec![(vec![0i32; dim], Trig::One)];
        for m in half_lattice(dim, torus_cutoff) {
            torus.push((m.clone(), Trig::Cos));
            torus.push((m, Trig::Sin));
        }
        let mut fiber = vec![(0u32, Trig::One)];
        for j in 1..=fiber_cutoff {
            fiber.push((j, Trig::Cos));
            fiber.push((j, Trig::Sin));
        }
        let mut modes = Vec::with_capacity(torus.len() * fiber.len());
        for (m, tt) in &torus {
            for (j, ft) in &fiber {
                let lambda = m.iter().map(|v| (*v as f64).powi(2)).sum();
                modes.push(SurrogateMode { torus: m.clone(), torus_trig: *tt, j: *j, fiber_trig: *ft, lambda });
            }
        }
        // stable sort keeps enumeration order among ties
        modes.sort_by(|a, b| {
            level_eigenvalue(n, a.lambda, a.j, z0).partial_cmp(&level_eigenvalue(n, b.lambda, b.j, z0)).unwrap()
        });
        let (pt, pf) = sampling(torus_cutoff, fiber_cutoff);
        let samples = tensor_samples(dim, pt, pf);
        let table = modes.iter().flat_map(|m| samples.iter().map(move |(x, th)| m.eval(x, *th))).collect();
        Ok(SpectrumProvider { n, torus_cutoff, fiber_cutoff, z0, modes, samples, table })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[SurrogateMode] {
        &self.modes
    }

    pub fn mode(&self, k: usize) -> Result<&SurrogateMode> {
        self.modes.get(k).ok_or(LabError::OutOfRange { what: "mode index", value: k as f64 })
    }

    pub fn samples(&self) -> &[(Vec<f64>, f64)] {
        &self.samples
    }

    fn psi_row(&self, k: usize) -> &[f64] {
        let s = self.samples.len();
        &self.table[k * s..(k + 1) * s]
    }

    /// Projections of one slice of samples onto every mode.
    pub fn transform(&self, slice: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.samples.len() as f64;
        (0..self.modes.len()).map(|k| self.psi_row(k).iter().zip(slice).map(|(p, v)| p * v).sum::<f64>() * inv).collect()
    }

    /// sum_k coef_k psi_k at every sample.
    pub fn synthesize(&self, coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.samples.len()];
        for (k, c) in coef.iter().enumerate() {
            if *c != 0.0 {
                for (o, p) in out.iter_mut().zip(self.psi_row(k)) {
                    *o += c * p;
                }
            }
        }
        out
    }
}

pub fn eigenvalue_at_level(provider: &SpectrumProvider, k: usize, z0: f64) -> Result<f64> {
    let m = provider.mode(k)?;
    Ok(level_eigenvalue(provider.n, m.lambda, m.j, z0))
}

/// The `count` smallest Lambda(z0) over the full lattice (complex modes, with multiplicity).
pub fn weyl_spectrum(n: u32, z0: f64, count: usize) -> Vec<f64> {
    let dim = 2 * n as usize - 2;
    let mut bound = 4.0;
    loop {
        let mcut = (bound * z0).sqrt().floor() as i32;
        let jcut = (bound / (n as f64 * z0.powi(n as i32 - 1))).sqrt().floor() as i32;
        let side = (2 * mcut + 1) as usize;
        let mut vals = Vec::new();
        for idx in 0..side.pow(dim as u32) {
            let mut rem = idx;
            let mut norm2 = 0.0;
            for _ in 0..dim {
                let m = (rem % side) as i32 - mcut;
                rem /= side;
                norm2 += (m as f64).powi(2);
            }
            for j in -jcut..=jcut {
                let l = level_eigenvalue(n, norm2, j.unsigned_abs(), z0);
                if l <= bound {
                    vals.push(l);
                }
            }
        }
        if vals.len() >= count {
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.truncate(count);
            return vals;
        }
        bound *= 1.5;
    }
}

/// Slope of log Lambda_k against log k over k in [k_lo, k_hi] (1-based k, Lambda_0 = 0 excluded).
pub fn weyl_exponent(n: u32, z0: f64, k_lo: usize, k_hi: usize) -> Result<f64> {
    let vals = weyl_spectrum(n, z0, k_hi + 1);
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for (k, v) in vals.iter().enumerate().take(k_hi + 1).skip(k_lo) {
        lx.push((k as f64).ln());
        ly.push(v.ln());
    }
    Ok(fit_line(&lx, &ly)?.slope)
}

/// Source v(z, x, theta) with a declared polynomial order in z.
#[derive(Clone)]
pub struct TensorField {
    f: Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>,
    pub delta: f64,
}

impl TensorField {
    pub fn new<F: Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static>(f: F, delta: f64) -> Self {
        TensorField { f: Arc::new(f), delta }
    }

    pub fn eval(&self, z: f64, x: &[f64], theta: f64) -> f64 {
        (self.f)(z, x, theta)
    }

    pub fn slice(&self, provider: &SpectrumProvider, z: f64) -> Vec<f64> {
        provider.samples().iter().map(|(x, th)| self.eval(z, x, *th)).collect()
    }
}

/// Relative difference tolerated between the projections on the standard and
/// the refined sampling before a source is declared aliased.
pub const ALIAS_TOL: f64 = 1e-9;

/// Projections at z of every mode, checked against a refined sampling.
pub fn project_all(provider: &SpectrumProvider, v: &TensorField, z: f64) -> Vec<f64> {
    provider.transform(&v.slice(provider, z))
}

/// P_k(v) on the radial grid.
pub fn project(provider: &SpectrumProvider, v: &TensorField, k: usize, grid: Arc<RadialGrid>) -> Result<RadialFunction> {
    let row = provider.psi_row(provider.mode(k).map(|_| k)?).to_vec();
    let inv = 1.0 / provider.samples().len() as f64;
    let vals = par::map(grid.z(), |&z| v.slice(provider, z).iter().zip(&row).map(|(a, b)| a * b).sum::<f64>() * inv);
    RadialFunction::new(grid, vals)
}

/// Compare projections with those from a sampling of twice the density plus
/// one at the given slices; error names the worst mode.
pub fn check_aliasing(provider: &SpectrumProvider, v: &TensorField, zs: &[f64]) -> Result<f64> {
    let dim = 2 * provider.n as usize - 2;
    let (pt, pf) = sampling(provider.torus_cutoff, provider.fiber_cutoff);
    let fine = tensor_samples(dim, 2 * pt + 1, 2 * pf + 1);
    let inv = 1.0 / fine.len() as f64;
    let fine_psi: Vec<Vec<f64>> =
        par::map(provider.modes(), |m| fine.iter().map(|(x, th)| m.eval(x, *th) * inv).collect());
    let mut worst: f64 = 0.0;
    for &z in zs {
        let coarse = project_all(provider, v, z);
        let vals: Vec<f64> = fine.iter().map(|(x, th)| v.eval(z, x, *th)).collect();
        let scale = coarse.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(vals.iter().fold(0.0f64, |a, b| a.max(b.abs())));
        for (k, m) in provider.modes().iter().enumerate() {
            let refined: f64 = fine_psi[k].iter().zip(&vals).map(|(p, f)| p * f).sum();
            let d = (refined - coarse[k]).abs() / scale.max(f64::MIN_POSITIVE);
            if d > ALIAS_TOL {
                return Err(LabError::Aliasing(format!(
                    "mode {k} (m = {:?}, j = {}) at z = {z}: projections differ by {d:e}; the source has frequencies above the sampling Nyquist limits |m_i| <= {}, |j| <= {}",
                    m.torus, m.j, provider.torus_cutoff, provider.fiber_cutoff
                )));
            }
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct ModeCoefficient {
    pub index: usize,
    pub mode: Mode,
    pub v: RadialFunction,
    pub u: RadialFunction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoissonReport {
    pub modes_used: usize,
    pub modes_dropped: usize,
    /// max_{k > N} sup|v_k| / max_k sup|v_k|.
    pub tail_estimate: f64,
    pub order_u: Option<DecayReport>,
    pub order_centered: Option<DecayReport>,
    pub alias_error: f64,
}

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub grid: Arc<RadialGrid>,
    pub coefficients: Vec<ModeCoefficient>,
    pub report: PoissonReport,
}

/// Projections whose sup is below this fraction of the largest are treated as zero.
pub const DROP_FRACTION: f64 = 64.0 * f64::EPSILON;

/// Largest tail ratio accepted as a convergent truncation.
pub const TAIL_LIMIT: f64 = 1e-6;

impl PoissonSolution {
    /// u at every sample of Y for grid index i, optionally without mode 0.
    pub fn assemble_slice(&self, provider: &SpectrumProvider, i: usize, skip_zero: bool) -> Vec<f64> {
        let mut coef = vec![0.0; provider.len()];
        for c in &self.coefficients {
            if skip_zero && c.index == 0 {
                continue;
            }
            coef[c.index] = c.u.values()[i];
        }
        provider.synthesize(&coef)
    }

    fn sup_profile(&self, provider: &SpectrumProvider, skip_zero: bool) -> Vec<f64> {
        par::map_range(self.grid.len(), |i| {
            self.assemble_slice(provider, i, skip_zero).iter().fold(0.0f64, |a, b| a.max(b.abs()))
        })
    }
}

/// Solve Delta u = v with the first `truncation` modes.
pub fn solve_poisson(
    provider: &SpectrumProvider,
    v: &TensorField,
    grid: Arc<RadialGrid>,
    truncation: usize,
    cfg: &GreenConfig,
) -> Result<PoissonSolution> {
    if grid.lower() < 1.0 {
        return Err(LabError::OutOfRange { what: "Poisson grid lower end (need >= 1)", value: grid.lower() });
    }
    let n = provider.n;
    let nmodes = provider.len();
    let truncation = truncation.min(nmodes);
    let zs: Vec<f64> = vec![grid.lower(), 0.5 * (grid.lower() + grid.upper()), grid.upper()];
    let alias_error = check_aliasing(provider, v, &zs)?;
    // all projections on the grid, slice by slice
    let slices: Vec<Vec<f64>> = par::map(grid.z(), |&z| project_all(provider, v, z));
    let sup: Vec<f64> = (0..nmodes).map(|k| slices.iter().fold(0.0f64, |a, s| a.max(s[k].abs()))).collect();
    let top = sup.iter().fold(0.0f64, |a, b| a.max(*b));
    let tail = sup[truncation..].iter().fold(0.0f64, |a, b| a.max(*b));
    let tail_estimate = if top > 0.0 { tail / top } else { 0.0 };
    if tail_estimate > TAIL_LIMIT {
        return Err(LabError::TailNotConvergent(format!(
            "modes beyond N = {truncation} carry {tail_estimate:e} of the largest projection"
        )));
    }
    let active: Vec<usize> = (0..truncation).filter(|&k| sup[k] > DROP_FRACTION * top).collect();
    let dropped = (0..truncation).filter(|&k| sup[k] > 0.0 && sup[k] <= DROP_FRACTION * top).count();
    let delta = v.delta;
    let coefficients = par::try_map(&active, |&k| {
        let sm = provider.mode(k)?;
        let vk = RadialFunction::new(grid.clone(), slices.iter().map(|s| s[k]).collect())?;
        let u = if sm.lambda == 0.0 && sm.j == 0 {
            fiber_mode_solve(n, &vk, delta)?.u
        } else {
            let pair = FundamentalPair::for_mode(n, &sm.mode(), &cfg.quadrature)?;
            let c0 = grid.z().iter().zip(vk.values()).map(|(z, f)| f.abs() * z.powf(-delta)).fold(0.0, f64::max);
            let bound = SourceBound { c0: 2.0 * c0, delta };
            let z_max = GreenSolver::suggest_z_max(&pair, grid.upper(), &bound, cfg.tail_tol)?;
            let solver = GreenSolver::new(pair, 1.0, z_max, cfg)?;
            let row = provider.psi_row(k).to_vec();
            let inv = 1.0 / provider.samples().len() as f64;
            let direct = |z: f64| v.slice(provider, z).iter().zip(&row).map(|(a, b)| a * b).sum::<f64>() * inv;
            // spectral interpolation of the projection inside the grid
            let src = |z: f64| if z <= grid.upper() { vk.eval(z).unwrap_or_else(|_| direct(z)) } else { direct(z) };
            solver.solve(grid.clone(), src, &bound)?.u
        };
        Ok::<_, LabError>(ModeCoefficient { index: k, mode: sm.mode(), v: vk, u })
    })?;
    let mut sol = PoissonSolution {
        grid: grid.clone(),
        coefficients,
        report: PoissonReport {
            modes_used: active.len(),
            modes_dropped: dropped,
            tail_estimate,
            order_u: None,
            order_centered: None,
            alias_error,
        },
    };
    let hi = grid.upper();
    let lo = (grid.lower() * hi).sqrt();
    let nf = n as f64;
    let prof = RadialFunction::new(grid.clone(), sol.sup_profile(provider, false))?;
    sol.report.order_u = DecayReport::fit_on(0, &prof, lo, hi, delta + nf + 1.0).ok();
    let centered = RadialFunction::new(grid.clone(), sol.sup_profile(provider, true))?;
    sol.report.order_centered = DecayReport::fit_on(1, &centered, lo, hi, delta + 1.0).ok();
    Ok(sol)
}

/// Per-slice residual of Delta u - v: mode by mode through the separated
/// Laplacian, then synthesized on the samples of Y.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceResidual {
    /// max over Y of |Delta u - v| at every grid point.
    pub per_slice: Vec<f64>,
    /// max over the grid relative to max |v|.
    pub max_relative: f64,
}

pub fn laplace_residual(solution: &PoissonSolution, v: &TensorField, provider: &SpectrumProvider) -> Result<LaplaceResidual> {
    let n = provider.n;
    let nf = n as f64;
    let grid = &solution.grid;
    let mut lap: Vec<(usize, RadialFunction)> = Vec::new();
    for c in &solution.coefficients {
        let d2 = c.u.second_derivative()?;
        let l = d2.zip_map(&c.u, |z, upp, uv| (upp - mode_potential(n, &c.mode, z) * uv) / (nf * z.powi(n as i32 - 1)))?;
        lap.push((c.index, l));
    }
    let rows: Vec<(f64, f64)> = par::map_range(grid.len(), |i| {
        let z = grid.z()[i];
        let mut coef = vec![0.0; provider.len()];
        for (k, l) in &lap {
            coef[*k] = l.values()[i];
        }
        let du = provider.synthesize(&coef);
        let vs = v.slice(provider, z);
        let r = du.iter().zip(&vs).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let vm = vs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        (r, vm)
    });
    let vmax = rows.iter().fold(0.0f64, |a, r| a.max(r.1));
    let per_slice: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let rmax = per_slice.iter().fold(0.0f64, |a, b| a.max(*b));
    Ok(LaplaceResidual { per_slice, max_relative: if vmax > 0.0 { rmax / vmax } else { rmax } })
}

/// Standard Poisson grid: 400 points on [1, 20], graded in ln z.
pub fn poisson_grid(n: u32) -> Result<Arc<RadialGrid>> {
    Ok(Arc::new(RadialGrid::panels(n, 1.0, 20.0, 25, 16)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(level_eigenvalue(3, 2.0, 1, 1.0), 5.0);
        assert_eq!(level_eigenvalue(3, 0.0, 0, 1.0), 0.0);
        let p = SpectrumProvider::new(3, 1, 2, 1.0).unwrap();
        assert_eq!(p.len(), 81 * 5);
        assert_eq!(eigenvalue_at_level(&p, 0, 1.0).unwrap(), 0.0);
        assert!(eigenvalue_at_level(&p, 1, 1.0).unwrap() > 0.0);
        for k in 1..p.len() {
            assert!(eigenvalue_at_level(&p, k, 1.0).unwrap() >= eigenvalue_at_level(&p, k - 1, 1.0).unwrap());
        }
    }

    #[test]
    fn basis_is_orthonormal_on_the_samples() {
        let p = SpectrumProvider::new(2, 2, 2, 1.0).unwrap();
        let s = p.samples().len();
        for a in 0..p.len() {
            for b in 0..p.len() {
                let ip: f64 = p.psi_row(a).iter().zip(p.psi_row(b)).map(|(x, y)| x * y).sum::<f64>() / s as f64;
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((ip - e).abs() < 1e-12, "{a} {b} {ip}");
            }
        }
    }

    #[test]
    fn weyl_exponent_near_two_over_2n_minus_1() {
        let e = weyl_exponent(3, 1.0, 50, 500).unwrap();
        assert!((e - 0.4).abs() < 0.08, "exponent {e}");
    }

    #[test]
    fn aliased_source_rejected() {
        let p = SpectrumProvider::new(2, 1, 1, 1.0).unwrap();
        let v = TensorField::new(|_, x, _| (3.0 * x[0]).cos(), -2.0);
        assert!(matches!(check_aliasing(&p, &v, &[1.0]), Err(LabError::Aliasing(_))));
        let ok = TensorField::new(|z, x, th| z * (x[0] - x[1]).sin() * th.cos(), -2.0);
        assert!(check_aliasing(&p, &ok, &[1.0, 2.0]).unwrap() < 1e-12);
    }
}
