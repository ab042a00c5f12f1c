//! Least-squares decay fits on log-log and semilog axes.

use crate::error::{LabError, Result};
use crate::radial::RadialFunction;
use serde::{Deserialize, Serialize};

/// Minimum number of samples a decay fit accepts.
pub const MIN_FIT_POINTS: usize = 20;

/// Samples with |f| below this are excluded from log fits.
pub const FIT_FLOOR: f64 = 1e3 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fitted line.
    pub rms: f64,
    pub points: usize,
}

/// Ordinary least squares y = slope x + intercept.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(LabError::FitTooShort { points: n, needed: 2 });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return Err(LabError::InvalidParameter("degenerate abscissae in fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    Ok(LineFit { slope, intercept, rms: (rss / n as f64).sqrt(), points: n })
}

/// Slope of log|f| against log z over z in [lo, hi], skipping |f| < floor.
pub fn fit_power_law(z: &[f64], f: &[f64], lo: f64, hi: f64, floor: f64) -> Result<LineFit> {
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for (&zi, &fi) in z.iter().zip(f) {
        if zi >= lo && zi <= hi && fi.is_finite() && fi.abs() >= floor {
            lx.push(zi.ln());
            ly.push(fi.abs().ln());
        }
    }
    if lx.len() < MIN_FIT_POINTS {
        return Err(LabError::FitTooShort { points: lx.len(), needed: MIN_FIT_POINTS });
    }
    fit_line(&lx, &ly)
}

/// Fitted log-log decay exponent of one iterate over a z-window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub index: usize,
    pub z_lo: f64,
    pub z_hi: f64,
    pub exponent: f64,
    pub target: f64,
    pub residual: f64,
    pub points: usize,
}

impl DecayReport {
    /// Fit log|f| over [lo, hi] with the standard floor; the window must lie
    /// inside [z_0, z_last].
    pub fn fit(index: usize, z: &[f64], f: &[f64], lo: f64, hi: f64, target: f64) -> Result<Self> {
        let grid_lo = z.first().copied().unwrap_or(f64::NAN);
        let grid_hi = z.last().copied().unwrap_or(f64::NAN);
        Self::fit_within(index, z, f, (lo, hi), (grid_lo, grid_hi), target)
    }

    /// As `fit`, with the window checked against the represented interval of a grid.
    pub fn fit_on(index: usize, f: &RadialFunction, lo: f64, hi: f64, target: f64) -> Result<Self> {
        let g = f.grid();
        Self::fit_within(index, f.z(), f.values(), (lo, hi), (g.lower(), g.upper()), target)
    }

    fn fit_within(
        index: usize,
        z: &[f64],
        f: &[f64],
        (lo, hi): (f64, f64),
        (grid_lo, grid_hi): (f64, f64),
        target: f64,
    ) -> Result<Self> {
        if !(lo >= grid_lo * (1.0 - 1e-12) && hi <= grid_hi * (1.0 + 1e-12) && lo < hi) {
            return Err(LabError::Ordering(format!(
                "fit window [{lo}, {hi}] not inside grid [{grid_lo}, {grid_hi}]"
            )));
        }
        let lf = fit_power_law(z, f, lo, hi, FIT_FLOOR)?;
        Ok(DecayReport {
            index,
            z_lo: lo,
            z_hi: hi,
            exponent: lf.slope,
            target,
            residual: lf.rms,
            points: lf.points,
        })
    }

    /// |exponent - target| <= tol.
    pub fn within(&self, tol: f64) -> bool {
        (self.exponent - self.target).abs() <= tol
    }

    /// exponent <= target + slack.
    pub fn at_most(&self, slack: f64) -> bool {
        self.exponent <= self.target + slack
    }
}

/// Exponent of a power law through the last `k` samples: used to
/// extrapolate integrals beyond the grid end.
pub fn end_exponent(z: &[f64], f: &[f64], k: usize) -> Option<f64> {
    let n = z.len();
    if n < k.max(2) {
        return None;
    }
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for i in n - k..n {
        if f[i] == 0.0 || !f[i].is_finite() {
            return None;
        }
        lx.push(z[i].ln());
        ly.push(f[i].abs().ln());
    }
    if f[n - k..].iter().any(|v| v.signum() != f[n - 1].signum()) {
        return None;
    }
    fit_line(&lx, &ly).ok().map(|l| l.slope)
}

/// int_{z_end}^inf of c s^p, the power law through (z_end, f_end); needs p < -1.
pub fn power_tail(z_end: f64, f_end: f64, p: f64) -> Option<f64> {
    if p < -1.0 {
        Some(-f_end * z_end / (p + 1.0))
    } else {
        None
    }
}
