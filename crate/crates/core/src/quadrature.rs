//! Gauss-Legendre rules and a globally adaptive bisection integrator.

use crate::error::{LabError, Result};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Tolerances for the adaptive integrator and for truncating infinite ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Infinite ranges are cut where the log of the integrand bound has
    /// dropped this far below its peak; the certified tail is then below
    /// `exp(-tail_log_drop)` relative to the peak contribution.
    pub tail_log_drop: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: 1e-300,
            rel_tol: 1e-13,
            max_subdivisions: 400,
            tail_log_drop: 45.0,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(LabError::InvalidParameter("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions == 0 {
            return Err(LabError::InvalidParameter("max_subdivisions must be positive".into()));
        }
        if !(self.tail_log_drop > 0.0) {
            return Err(LabError::InvalidParameter("tail_log_drop must be positive".into()));
        }
        Ok(())
    }

    /// Truncation threshold as an absolute factor.
    pub fn tail_factor(&self) -> f64 {
        (-self.tail_log_drop).exp()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes by Newton iteration on the three-term recurrence, ascending.
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        let mf = m as f64;
        for i in 0..(m + 1) / 2 {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(m, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(m, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[m - 1 - i] = x;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Fixed-rule integral of `f` over [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + h * x);
        }
        s * h
    }

    /// Nodes mapped to [a, b].
    pub fn mapped_nodes(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes.iter().map(move |x| c + h * x)
    }
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if m == 0 {
        return (1.0, 0.0);
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const ADAPTIVE_ORDER: usize = 15;

fn adaptive_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(ADAPTIVE_ORDER))
}

/// Cached rule of the requested order for small orders used throughout.
pub fn cached_rule(m: usize) -> &'static GaussLegendre {
    static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (0..=32).map(|k| GaussLegendre::new(k.max(1))).collect());
    &rules[m.clamp(1, 32)]
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

struct Segment<const K: usize> {
    a: f64,
    b: f64,
    left: [f64; K],
    right: [f64; K],
    abs: f64,
    err: f64,
}

fn half_sums<const K: usize, F: FnMut(f64) -> [f64; K]>(f: &mut F, a: f64, b: f64) -> ([f64; K], f64) {
    let rule = adaptive_rule();
    let mut s = [0.0; K];
    let mut sa = 0.0;
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let v = f(c + h * x);
        for k in 0..K {
            s[k] += w * v[k];
        }
        sa += w * v[0].abs();
    }
    for sk in s.iter_mut() {
        *sk *= h;
    }
    (s, sa * h.abs())
}

fn split<const K: usize, F: FnMut(f64) -> [f64; K]>(
    f: &mut F,
    a: f64,
    b: f64,
    whole: [f64; K],
    scale: &[f64; K],
) -> Segment<K> {
    let m = 0.5 * (a + b);
    let (left, la) = half_sums(f, a, m);
    let (right, ra) = half_sums(f, m, b);
    let mut err: f64 = 0.0;
    for k in 0..K {
        let e = (whole[k] - left[k] - right[k]).abs();
        // components after the first are measured relative to the first
        err = err.max(if k == 0 { e } else { e * scale[k] });
    }
    Segment { a, b, left, right, abs: la + ra, err }
}

/// Adaptive integral of a vector-valued integrand over consecutive intervals
/// given by `points`. Each segment carries a 15-point estimate over the
/// whole and over both halves; their difference is the error estimate and
/// the segment with the largest one is bisected. Tolerances apply to the
/// first component; the others are controlled to the same relative level.
pub fn integrate_points_vec<const K: usize, F: FnMut(f64) -> [f64; K]>(
    mut f: F,
    points: &[f64],
    cfg: &QuadratureConfig,
) -> Result<[Estimate; K]> {
    if points.len() < 2 {
        return Err(LabError::InvalidParameter("need at least two integration points".into()));
    }
    let mut evals = 0usize;
    let mut wholes = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(a.is_finite() && b.is_finite()) {
            return Err(LabError::InvalidParameter("integration limits must be finite".into()));
        }
        if b == a {
            continue;
        }
        let (whole, _) = half_sums(&mut f, a, b);
        wholes.push((a, b, whole));
        evals += ADAPTIVE_ORDER;
    }
    if wholes.is_empty() {
        return Ok([Estimate { value: 0.0, error: 0.0, evaluations: 0 }; K]);
    }
    // relative weights that put every component on the scale of the first
    let mut scale = [1.0; K];
    let tot0: f64 = wholes.iter().map(|w| w.2[0]).sum();
    for k in 1..K {
        let tk: f64 = wholes.iter().map(|w| w.2[k]).sum();
        scale[k] = if tk != 0.0 { (tot0 / tk).abs() } else { 0.0 };
    }
    let mut segs: Vec<Segment<K>> = Vec::new();
    for (a, b, whole) in wholes {
        segs.push(split(&mut f, a, b, whole, &scale));
        evals += 2 * ADAPTIVE_ORDER;
    }
    let mut subdivisions = segs.len();
    loop {
        let mut value = [0.0; K];
        for s in &segs {
            for k in 0..K {
                value[k] += s.left[k] + s.right[k];
            }
        }
        let error: f64 = segs.iter().map(|s| s.err).sum();
        let abs: f64 = segs.iter().map(|s| s.abs).sum();
        if value.iter().any(|v| !v.is_finite()) || !error.is_finite() {
            return Err(LabError::QuadratureFailed { estimate: value[0], error, subdivisions });
        }
        let target = cfg.abs_tol.max(cfg.rel_tol * value[0].abs());
        if error <= target || error <= 64.0 * f64::EPSILON * abs {
            let mut out = [Estimate { value: 0.0, error, evaluations: evals }; K];
            for k in 0..K {
                out[k].value = value[k];
                if k > 0 && scale[k] > 0.0 {
                    out[k].error = error / scale[k];
                }
            }
            return Ok(out);
        }
        if subdivisions >= cfg.max_subdivisions {
            return Err(LabError::QuadratureFailed { estimate: value[0], error, subdivisions });
        }
        let (idx, _) = segs
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, s)| if s.err > acc.1 { (i, s.err) } else { acc });
        let s = segs.swap_remove(idx);
        let m = 0.5 * (s.a + s.b);
        if (s.b - s.a).abs() <= 8.0 * f64::EPSILON * m.abs().max(f64::MIN_POSITIVE) {
            // cannot bisect further; accept the segment as it stands
            segs.push(Segment { err: 0.0, ..s });
            continue;
        }
        segs.push(split(&mut f, s.a, m, s.left, &scale));
        segs.push(split(&mut f, m, s.b, s.right, &scale));
        evals += 4 * ADAPTIVE_ORDER;
        subdivisions += 1;
    }
}

/// Adaptive integral of `f` over the union of consecutive intervals given by
/// `points` (at least two, non-decreasing).
pub fn integrate_points<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], cfg: &QuadratureConfig) -> Result<Estimate> {
    let [e] = integrate_points_vec(|x| [f(x)], points, cfg)?;
    Ok(e)
}

/// Adaptive integral of `f` over [a, b].
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<Estimate> {
    integrate_points(f, &[a, b], cfg)
}

/// Smallest `t >= start` such that `log_bound` is below `peak - drop` and
/// still decreasing there. `log_bound` must eventually decrease to -inf.
pub fn truncation_point<F: Fn(f64) -> f64>(log_bound: F, start: f64, step: f64, peak: f64, drop: f64) -> Result<f64> {
    let mut t = start.max(0.0);
    let mut h = step.max(1e-3);
    for _ in 0..200 {
        let v = log_bound(t);
        let v2 = log_bound(t + h * 1e-3);
        if v < peak - drop && v2 <= v {
            return Ok(t);
        }
        t += h;
        h *= 1.5;
    }
    Err(LabError::QuadratureFailed { estimate: f64::NAN, error: f64::INFINITY, subdivisions: 0 })
}
