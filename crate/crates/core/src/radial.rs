//! Radial grids and sampled radial functions.
//!
//! Two layouts are supported. `Panels` places Gauss-Legendre nodes on panels
//! of equal width in s = ln z; derivatives, antiderivatives and interpolation
//! are spectral within each panel. `Points` is an arbitrary strictly
//! increasing sample set; derivatives use 5-point finite-difference stencils
//! and integrals use local cubic interpolation (both fourth order).

use crate::error::{LabError, Result};
use crate::quadrature::GaussLegendre;
use std::sync::Arc;

/// Per-order panel operators on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct PanelOps {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    bary: Vec<f64>,
    diff: Vec<f64>,
    cumint: Vec<f64>,
}

impl PanelOps {
    pub fn new(m: usize) -> Self {
        let gl = GaussLegendre::new(m);
        let x = gl.nodes.clone();
        let mut bary = vec![1.0; m];
        for k in 0..m {
            for i in 0..m {
                if i != k {
                    bary[k] /= x[k] - x[i];
                }
            }
        }
        let mut diff = vec![0.0; m * m];
        for i in 0..m {
            let mut s = 0.0;
            for k in 0..m {
                if i != k {
                    let d = bary[k] / bary[i] / (x[i] - x[k]);
                    diff[i * m + k] = d;
                    s += d;
                }
            }
            diff[i * m + i] = -s;
        }
        let mut ops = PanelOps { nodes: x, weights: gl.weights.clone(), bary, diff, cumint: vec![0.0; m * m] };
        let mut cumint = vec![0.0; m * m];
        for i in 0..m {
            let b = ops.nodes[i];
            let c = 0.5 * (b - 1.0);
            let h = 0.5 * (b + 1.0);
            for (xq, wq) in gl.nodes.iter().zip(&gl.weights) {
                let basis = ops.basis_at(c + h * xq);
                for k in 0..m {
                    cumint[i * m + k] += wq * h * basis[k];
                }
            }
        }
        ops.cumint = cumint;
        ops
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Values of all Lagrange basis polynomials at xi in [-1, 1].
    pub fn basis_at(&self, xi: f64) -> Vec<f64> {
        let m = self.order();
        let mut out = vec![0.0; m];
        for k in 0..m {
            if xi == self.nodes[k] {
                out[k] = 1.0;
                return out;
            }
        }
        let mut den = 0.0;
        for k in 0..m {
            let t = self.bary[k] / (xi - self.nodes[k]);
            out[k] = t;
            den += t;
        }
        for v in out.iter_mut() {
            *v /= den;
        }
        out
    }

    fn apply(mat: &[f64], m: usize, v: &[f64], out: &mut [f64]) {
        for i in 0..m {
            let mut s = 0.0;
            for k in 0..m {
                s += mat[i * m + k] * v[k];
            }
            out[i] = s;
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layout {
    /// Panel edges in s = ln z and the shared reference operators.
    Panels { edges: Vec<f64>, ops: Arc<PanelOps> },
    Points,
}

/// Strictly increasing radial samples with t = z^n.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    n: u32,
    z: Vec<f64>,
    t: Vec<f64>,
    layout: Layout,
}

fn check_n(n: u32) -> Result<()> {
    if n < 2 {
        return Err(LabError::InvalidParameter(format!("n must be at least 2, got {n}")));
    }
    Ok(())
}

impl RadialGrid {
    /// Gauss-Legendre panels of equal width in ln z covering [z_lo, z_hi].
    pub fn panels(n: u32, z_lo: f64, z_hi: f64, panel_count: usize, order: usize) -> Result<Self> {
        check_n(n)?;
        if !(z_lo > 0.0 && z_hi > z_lo && z_hi.is_finite()) {
            return Err(LabError::Ordering(format!("need 0 < z_lo < z_hi, got [{z_lo}, {z_hi}]")));
        }
        if panel_count == 0 || order < 3 {
            return Err(LabError::GridTooCoarse(format!("{panel_count} panels of order {order}")));
        }
        let (s0, s1) = (z_lo.ln(), z_hi.ln());
        let mut edges: Vec<f64> = (0..=panel_count)
            .map(|k| s0 + (s1 - s0) * k as f64 / panel_count as f64)
            .collect();
        edges[0] = s0;
        edges[panel_count] = s1;
        Self::from_edges(n, edges, order)
    }

    /// Panels in ln z with at most `max_width` per panel.
    pub fn panels_by_width(n: u32, z_lo: f64, z_hi: f64, max_width: f64, order: usize) -> Result<Self> {
        if !(z_lo > 0.0 && z_hi > z_lo) {
            return Err(LabError::Ordering(format!("need 0 < z_lo < z_hi, got [{z_lo}, {z_hi}]")));
        }
        let count = ((z_hi.ln() - z_lo.ln()) / max_width).ceil().max(1.0) as usize;
        Self::panels(n, z_lo, z_hi, count, order)
    }

    /// Panels with explicit edges in s = ln z.
    pub fn from_edges(n: u32, edges: Vec<f64>, order: usize) -> Result<Self> {
        check_n(n)?;
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Ordering("panel edges must be strictly increasing".into()));
        }
        let ops = Arc::new(PanelOps::new(order));
        let mut z = Vec::with_capacity((edges.len() - 1) * order);
        for w in edges.windows(2) {
            let c = 0.5 * (w[0] + w[1]);
            let h = 0.5 * (w[1] - w[0]);
            for x in &ops.nodes {
                z.push((c + h * x).exp());
            }
        }
        let nf = n as f64;
        let t = z.iter().map(|z| z.powf(nf)).collect();
        Ok(RadialGrid { n, z, t, layout: Layout::Panels { edges, ops } })
    }

    /// Arbitrary samples given in t.
    pub fn from_t(n: u32, t: Vec<f64>) -> Result<Self> {
        check_n(n)?;
        if t.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LabError::InvalidParameter("t samples must be finite and positive".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Ordering("t samples must be strictly increasing".into()));
        }
        let inv = 1.0 / n as f64;
        let z = t.iter().map(|t| t.powf(inv)).collect();
        Ok(RadialGrid { n, z, t, layout: Layout::Points })
    }

    /// Arbitrary samples given in z.
    pub fn from_z(n: u32, z: Vec<f64>) -> Result<Self> {
        check_n(n)?;
        if z.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LabError::InvalidParameter("z samples must be finite and positive".into()));
        }
        if z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Ordering("z samples must be strictly increasing".into()));
        }
        let nf = n as f64;
        let t = z.iter().map(|z| z.powf(nf)).collect();
        Ok(RadialGrid { n, z, t, layout: Layout::Points })
    }

    /// `count` equally spaced points on [z_lo, z_hi], endpoints included.
    pub fn uniform_z(n: u32, z_lo: f64, z_hi: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(LabError::GridTooCoarse(format!("{count} points")));
        }
        let h = (z_hi - z_lo) / (count - 1) as f64;
        let mut z: Vec<f64> = (0..count).map(|i| z_lo + h * i as f64).collect();
        z[count - 1] = z_hi;
        Self::from_z(n, z)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Left end of the represented interval (first panel edge or first point).
    pub fn lower(&self) -> f64 {
        match &self.layout {
            Layout::Panels { edges, .. } => edges[0].exp(),
            Layout::Points => self.z[0],
        }
    }

    /// Right end of the represented interval.
    pub fn upper(&self) -> f64 {
        match &self.layout {
            Layout::Panels { edges, .. } => edges[edges.len() - 1].exp(),
            Layout::Points => self.z[self.z.len() - 1],
        }
    }

    /// Indices of samples with z in [lo, hi].
    /// Offset and weights w such that f(z) ~ sum_k w_k f[offset + k]:
    /// barycentric on panels, local cubic Lagrange on points.
    pub fn interpolation_weights(&self, z: f64) -> Result<(usize, Vec<f64>)> {
        let (lo, hi) = (self.lower(), self.upper());
        let tol = 1e-12 * hi;
        if !(z >= lo - tol && z <= hi + tol) {
            return Err(LabError::OutOfRange { what: "radial interpolation", value: z });
        }
        Ok(match &self.layout {
            Layout::Panels { edges, ops } => {
                let s = z.ln();
                let p = edges.partition_point(|&e| e <= s).clamp(1, edges.len() - 1) - 1;
                let c = 0.5 * (edges[p] + edges[p + 1]);
                let h = 0.5 * (edges[p + 1] - edges[p]);
                (p * ops.order(), ops.basis_at(((s - c) / h).clamp(-1.0, 1.0)))
            }
            Layout::Points => {
                let x = &self.z;
                let len = x.len();
                let (s, k) = if len < 4 {
                    (0, len)
                } else {
                    let i = x.partition_point(|&v| v <= z).saturating_sub(1);
                    (i.saturating_sub(1).min(len - 4), 4)
                };
                (s, lagrange_weights(&x[s..s + k], z))
            }
        })
    }

    pub fn window(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.z.partition_point(|&z| z < lo);
        let b = self.z.partition_point(|&z| z <= hi);
        a..b.max(a)
    }
}

/// A function sampled on a radial grid.
#[derive(Debug, Clone)]
pub struct RadialFunction {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

/// Weights of the `m`-th derivative at x0 from samples xs (Fornberg).
pub fn fornberg_weights(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let np = xs.len();
    let mut c = vec![vec![0.0; m + 1]; np];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..np {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[m]).collect()
}

/// Start index of a `width`-point stencil centred on i and clamped to the grid.
pub fn stencil_start(i: usize, len: usize, width: usize) -> usize {
    let half = width / 2;
    i.saturating_sub(half).min(len - width)
}

fn points_derivative(x: &[f64], f: &[f64], m: usize) -> Result<Vec<f64>> {
    let len = x.len();
    let need = if m >= 2 { 6 } else { 5 };
    if len < need {
        return Err(LabError::GridTooCoarse(format!("{len} points, stencils need {need}")));
    }
    let mut out = vec![0.0; len];
    for i in 0..len {
        // one-sided second-derivative stencils need a sixth point to stay fourth order
        let width = if i >= 2 && i + 2 < len { 5 } else { need };
        let s = stencil_start(i, len, width);
        let w = fornberg_weights(x[i], &x[s..s + width], m);
        out[i] = (0..width).map(|k| w[k] * f[s + k]).sum();
    }
    Ok(out)
}

fn lagrange_weights(xs: &[f64], x: f64) -> Vec<f64> {
    (0..xs.len())
        .map(|k| {
            let mut l = 1.0;
            for i in 0..xs.len() {
                if i != k {
                    l *= (x - xs[i]) / (xs[k] - xs[i]);
                }
            }
            l
        })
        .collect()
}

/// Integral over [x_i, x_{i+1}] of the cubic through the 4 nearest samples.
fn cubic_interval_integral(x: &[f64], f: &[f64], i: usize) -> f64 {
    let len = x.len();
    let s = if len < 4 { 0 } else { (i.saturating_sub(1)).min(len - 4) };
    let e = (s + 4).min(len);
    let (a, b) = (x[i], x[i + 1]);
    let gl = crate::quadrature::cached_rule(3);
    gl.integrate(|t| lagrange_weights(&x[s..e], t).iter().zip(&f[s..e]).map(|(w, v)| w * v).sum::<f64>(), a, b)
}

impl RadialFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::InvalidParameter(format!(
                "{} values for a grid of {} samples",
                values.len(),
                grid.len()
            )));
        }
        Ok(RadialFunction { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<RadialGrid>, f: F) -> Self {
        let values = grid.z.iter().map(|&z| f(z)).collect();
        RadialFunction { grid, values }
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        RadialFunction { grid, values: vec![0.0; n] }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn z(&self) -> &[f64] {
        &self.grid.z
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map<F: Fn(f64, f64) -> f64>(&self, f: F) -> Self {
        let values = self.grid.z.iter().zip(&self.values).map(|(&z, &v)| f(z, v)).collect();
        RadialFunction { grid: self.grid.clone(), values }
    }

    pub fn zip_map<F: Fn(f64, f64, f64) -> f64>(&self, other: &Self, f: F) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self
            .grid
            .z
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(&z, (&a, &b))| f(z, a, b))
            .collect();
        Ok(RadialFunction { grid: self.grid.clone(), values })
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if !Arc::ptr_eq(&self.grid, &other.grid) && self.grid.z != other.grid.z {
            return Err(LabError::InvalidParameter("functions live on different grids".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |_, a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |_, a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|_, v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// (df/ds, d2f/ds2) with s = ln z on a panel grid.
    fn panel_s_derivatives(&self, edges: &[f64], ops: &PanelOps) -> (Vec<f64>, Vec<f64>) {
        let m = ops.order();
        let mut d1 = vec![0.0; self.values.len()];
        let mut d2 = vec![0.0; self.values.len()];
        let mut tmp = vec![0.0; m];
        for (p, w) in edges.windows(2).enumerate() {
            let h = 0.5 * (w[1] - w[0]);
            let r = p * m..(p + 1) * m;
            PanelOps::apply(&ops.diff, m, &self.values[r.clone()], &mut tmp);
            for v in tmp.iter_mut() {
                *v /= h;
            }
            d1[r.clone()].copy_from_slice(&tmp);
            let mut tmp2 = vec![0.0; m];
            PanelOps::apply(&ops.diff, m, &tmp, &mut tmp2);
            for (k, v) in tmp2.iter().enumerate() {
                d2[p * m + k] = v / h;
            }
        }
        (d1, d2)
    }

    /// df/dz.
    pub fn derivative(&self) -> Result<Self> {
        let values = match &self.grid.layout {
            Layout::Panels { edges, ops } => {
                let (d1, _) = self.panel_s_derivatives(edges, ops);
                d1.iter().zip(&self.grid.z).map(|(d, z)| d / z).collect()
            }
            Layout::Points => points_derivative(&self.grid.z, &self.values, 1)?,
        };
        Ok(RadialFunction { grid: self.grid.clone(), values })
    }

    /// d2f/dz2.
    pub fn second_derivative(&self) -> Result<Self> {
        let values = match &self.grid.layout {
            Layout::Panels { edges, ops } => {
                let (d1, d2) = self.panel_s_derivatives(edges, ops);
                d1.iter()
                    .zip(&d2)
                    .zip(&self.grid.z)
                    .map(|((a, b), z)| (b - a) / (z * z))
                    .collect()
            }
            Layout::Points => points_derivative(&self.grid.z, &self.values, 2)?,
        };
        Ok(RadialFunction { grid: self.grid.clone(), values })
    }

    /// (df/dt, d2f/dt2) computed directly in the t variable.
    pub fn t_derivatives(&self) -> Result<(Self, Self)> {
        let nf = self.grid.n as f64;
        let (d1, d2) = match &self.grid.layout {
            Layout::Panels { edges, ops } => {
                // t = e^{n s}: f_t = f_s/(n t), f_tt = (f_ss - n f_s)/(n t)^2
                let (s1, s2) = self.panel_s_derivatives(edges, ops);
                let t = &self.grid.t;
                let d1: Vec<f64> = s1.iter().zip(t).map(|(a, t)| a / (nf * t)).collect();
                let d2: Vec<f64> = s1
                    .iter()
                    .zip(&s2)
                    .zip(t)
                    .map(|((a, b), t)| (b - nf * a) / (nf * nf * t * t))
                    .collect();
                (d1, d2)
            }
            Layout::Points => (
                points_derivative(&self.grid.t, &self.values, 1)?,
                points_derivative(&self.grid.t, &self.values, 2)?,
            ),
        };
        Ok((
            RadialFunction { grid: self.grid.clone(), values: d1 },
            RadialFunction { grid: self.grid.clone(), values: d2 },
        ))
    }

    /// int_{lower}^{z_i} f dz at every sample.
    pub fn cumulative_integral(&self) -> Self {
        let values = match &self.grid.layout {
            Layout::Panels { edges, ops } => {
                let m = ops.order();
                let mut out = vec![0.0; self.values.len()];
                let mut carry = 0.0;
                let g: Vec<f64> = self.values.iter().zip(&self.grid.z).map(|(f, z)| f * z).collect();
                for (p, w) in edges.windows(2).enumerate() {
                    let h = 0.5 * (w[1] - w[0]);
                    let seg = &g[p * m..(p + 1) * m];
                    for i in 0..m {
                        let mut s = 0.0;
                        for k in 0..m {
                            s += ops.cumint[i * m + k] * seg[k];
                        }
                        out[p * m + i] = carry + h * s;
                    }
                    let total: f64 = seg.iter().zip(&ops.weights).map(|(g, w)| g * w).sum();
                    carry += h * total;
                }
                out
            }
            Layout::Points => {
                let x = &self.grid.z;
                let mut out = vec![0.0; x.len()];
                for i in 1..x.len() {
                    out[i] = out[i - 1] + cubic_interval_integral(x, &self.values, i - 1);
                }
                out
            }
        };
        RadialFunction { grid: self.grid.clone(), values }
    }

    /// int over the whole represented interval.
    pub fn integral(&self) -> f64 {
        match &self.grid.layout {
            Layout::Panels { edges, ops } => {
                let m = ops.order();
                let mut total = 0.0;
                for (p, w) in edges.windows(2).enumerate() {
                    let h = 0.5 * (w[1] - w[0]);
                    let mut s = 0.0;
                    for k in 0..m {
                        s += ops.weights[k] * self.values[p * m + k] * self.grid.z[p * m + k];
                    }
                    total += h * s;
                }
                total
            }
            Layout::Points => {
                let c = self.cumulative_integral();
                c.values[c.values.len() - 1]
            }
        }
    }

    /// int_{z_i}^{upper} f dz at every sample.
    pub fn tail_integral(&self) -> Self {
        let total = self.integral();
        let c = self.cumulative_integral();
        c.map(|_, v| total - v)
    }

    /// Interpolated value at z inside [lower, upper].
    pub fn eval(&self, z: f64) -> Result<f64> {
        let (start, w) = self.grid.interpolation_weights(z)?;
        Ok(w.iter().zip(&self.values[start..]).map(|(b, v)| b * v).sum())
    }

    /// Resample onto another grid by interpolation.
    pub fn resample(&self, grid: Arc<RadialGrid>) -> Result<Self> {
        let values = grid.z.iter().map(|&z| self.eval(z)).collect::<Result<Vec<_>>>()?;
        Ok(RadialFunction { grid, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_grid() -> Arc<RadialGrid> {
        Arc::new(RadialGrid::panels(3, 1.0, 20.0, 40, 16).unwrap())
    }

    #[test]
    fn z_matches_t_root() {
        let g = RadialGrid::from_t(3, vec![0.5, 1.0, 8.0, 27.5]).unwrap();
        for (z, t) in g.z().iter().zip(g.t()) {
            assert!((z.powi(3) - t).abs() < 1e-14 * t);
        }
        let g = panel_grid();
        for (z, t) in g.z().iter().zip(g.t()) {
            assert!((z.powf(1.0 / 3.0) - t.powf(1.0 / 9.0)).abs() < 1e-14);
            assert!((t.powf(1.0 / 3.0) - z).abs() < 1e-13 * z);
        }
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(RadialGrid::from_t(3, vec![1.0, 1.0]).is_err());
        assert!(RadialGrid::from_t(3, vec![-1.0, 1.0]).is_err());
        assert!(RadialGrid::from_t(1, vec![1.0, 2.0]).is_err());
        assert!(RadialGrid::panels(3, 2.0, 1.0, 4, 8).is_err());
    }

    #[test]
    fn spectral_derivatives_and_integrals() {
        let g = panel_grid();
        let f = RadialFunction::from_fn(g.clone(), |z| z.sin() / z);
        let d = f.derivative().unwrap();
        let d2 = f.second_derivative().unwrap();
        for (i, &z) in g.z().iter().enumerate() {
            let e1 = z.cos() / z - z.sin() / (z * z);
            let e2 = -z.sin() / z - 2.0 * z.cos() / (z * z) + 2.0 * z.sin() / z.powi(3);
            assert!((d.values()[i] - e1).abs() < 1e-11);
            assert!((d2.values()[i] - e2).abs() < 1e-9);
        }
        let p = RadialFunction::from_fn(g.clone(), |z| 3.0 * z * z);
        let c = p.cumulative_integral();
        for (i, &z) in g.z().iter().enumerate() {
            assert!((c.values()[i] - (z.powi(3) - 1.0)).abs() < 1e-10 * z.powi(3));
        }
        assert!((p.integral() - 7999.0).abs() < 1e-9);
        let tail = p.tail_integral();
        assert!((tail.values()[0] + c.values()[0] - 7999.0).abs() < 1e-9);
    }

    #[test]
    fn interpolation_is_spectral_on_panels() {
        let g = panel_grid();
        let f = RadialFunction::from_fn(g.clone(), |z| (0.3 * z).cos() * z.powi(2));
        for z in [1.0, 1.01, 3.3, 7.77, 19.99, 20.0] {
            assert!((f.eval(z).unwrap() - (0.3 * z).cos() * z * z).abs() < 1e-11 * z * z);
        }
        assert!(f.eval(25.0).is_err());
    }

    #[test]
    fn points_layout_is_fourth_order() {
        let err = |count: usize| {
            let g = Arc::new(RadialGrid::uniform_z(3, 1.0, 3.0, count).unwrap());
            let f = RadialFunction::from_fn(g.clone(), |z| z.exp());
            let d2 = f.second_derivative().unwrap();
            d2.values().iter().zip(g.z()).map(|(a, z)| (a - z.exp()).abs()).fold(0.0, f64::max)
        };
        let ratio = err(41) / err(81);
        assert!(ratio > 12.0, "refinement ratio {ratio}");
        let g = Arc::new(RadialGrid::uniform_z(3, 0.0f64.max(1.0), 2.0, 41).unwrap());
        let f = RadialFunction::from_fn(g, |z| z.powi(3));
        assert!((f.integral() - (16.0 - 1.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn too_coarse_points_grid_rejected() {
        let g = Arc::new(RadialGrid::from_z(3, vec![1.0, 2.0, 3.0]).unwrap());
        let f = RadialFunction::from_fn(g, |z| z);
        assert!(matches!(f.second_derivative(), Err(LabError::GridTooCoarse(_))));
    }

    #[test]
    fn fornberg_reproduces_central_differences() {
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let exact = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(exact) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn t_derivatives_agree_with_chain_rule() {
        let g = panel_grid();
        let f = RadialFunction::from_fn(g.clone(), |z| z.powi(3).sqrt());
        let (ft, ftt) = f.t_derivatives().unwrap();
        for (i, &t) in g.t().iter().enumerate() {
            assert!((ft.values()[i] - 0.5 / t.sqrt()).abs() < 1e-12 / t.sqrt());
            assert!((ftt.values()[i] + 0.25 * t.powf(-1.5)).abs() < 2e-9 * t.powf(-1.5));
        }
    }
}
