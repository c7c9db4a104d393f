//! Log-log power-law fits of spatial tails and temporal envelopes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Values at or below this are excluded from fits.
pub const NOISE_FLOOR: f64 = 1e-14;
/// Minimum number of usable samples in a fit window.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub kind: FitKind,
    pub slope: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    /// Coefficient of determination of the log-log regression.
    pub r_squared: f64,
    /// `(radius or time, value)` pairs used in the fit.
    pub points: Vec<(f64, f64)>,
}

impl DecayFit {
    /// Fitted value at abscissa `x`.
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

impl DecayFit {
    /// Root-mean-square residual of the log-log regression.
    pub fn log_residual(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let ss: f64 = self
            .points
            .iter()
            .map(|&(x, v)| (v.ln() - self.intercept - self.slope * x.ln()).powi(2))
            .sum();
        (ss / self.points.len() as f64).sqrt()
    }
}

/// How a measured value is compared with its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|value - target| ≤ tolerance`
    Within,
    /// `value ≤ target + tolerance`
    AtMost,
    /// `value ≥ target - tolerance`
    AtLeast,
}

impl Relation {
    pub fn holds(self, value: f64, target: f64, tolerance: f64) -> bool {
        value.is_finite()
            && match self {
                Relation::Within => (value - target).abs() <= tolerance,
                Relation::AtMost => value <= target + tolerance,
                Relation::AtLeast => value >= target - tolerance,
            }
    }
}

/// A scalar diagnostic with its acceptance rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, target: f64, tolerance: f64, relation: Relation) -> Self {
        Check {
            name: name.into(),
            value,
            target,
            tolerance,
            relation,
            pass: relation.holds(value, target, tolerance),
        }
    }
}

/// A fitted decay exponent together with its window, residual and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exponent {
    pub name: String,
    pub kind: FitKind,
    pub slope: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    /// RMS residual of `ln v` about the fitted line.
    pub residual: f64,
    pub target: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
    pub points: Vec<(f64, f64)>,
}

impl Exponent {
    pub fn from_fit(name: impl Into<String>, fit: &DecayFit, target: f64, tolerance: f64, relation: Relation) -> Self {
        Exponent {
            name: name.into(),
            kind: fit.kind,
            slope: fit.slope,
            intercept: fit.intercept,
            window: fit.window,
            r_squared: fit.r_squared,
            residual: fit.log_residual(),
            target,
            tolerance,
            relation,
            pass: relation.holds(fit.slope, target, tolerance),
            points: fit.points.clone(),
        }
    }
}

/// Least-squares fit of `ln v = c + s ln x` over the points with
/// `x ∈ [lo, hi]` and `v > NOISE_FLOOR`.
pub fn fit_points(kind: FitKind, points: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidInput(format!(
            "fit window [{lo}, {hi}] must satisfy 0 < lo < hi"
        )));
    }
    let used: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(x, v)| x >= lo && x <= hi && v > NOISE_FLOOR && v.is_finite())
        .collect();
    if used.len() < MIN_POINTS {
        return Err(Error::WindowUnderflow(format!(
            "{} usable samples in [{lo}, {hi}], need {MIN_POINTS}",
            used.len()
        )));
    }
    let k = used.len() as f64;
    let lx: Vec<f64> = used.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = used.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::WindowUnderflow("all samples share one abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(DecayFit {
        kind,
        slope,
        intercept,
        window,
        r_squared,
        points: used,
    })
}

/// Maximum of `values` over logarithmically spaced radial shells in
/// `[lo, hi]`, reported at the radius where the maximum is attained.
pub fn shell_maxima(grid: &Grid, values: &[f64], window: (f64, f64), bins: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = window;
    let geo = grid.geometry();
    let (llo, lhi) = (lo.ln(), hi.ln());
    let width = (lhi - llo) / bins as f64;
    let mut best: Vec<Option<(f64, f64)>> = vec![None; bins];
    for (&r, &v) in geo.radius.iter().zip(values) {
        if r < lo || r > hi {
            continue;
        }
        let b = (((r.ln() - llo) / width) as usize).min(bins - 1);
        let v = v.abs();
        match best[b] {
            Some((_, m)) if m >= v => {}
            _ => best[b] = Some((r, v)),
        }
    }
    best.into_iter().flatten().collect()
}

/// Options for spatial tail fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialFitOptions {
    /// Largest admissible window radius as a fraction of the half-width `L`.
    pub max_radius_fraction: f64,
    /// Number of radial shells; `None` picks one per grid spacing, capped.
    pub bins: Option<usize>,
}

impl Default for SpatialFitOptions {
    fn default() -> Self {
        SpatialFitOptions {
            max_radius_fraction: 0.25,
            bins: None,
        }
    }
}

/// Slope of `ln max_{shell} |v|` against `ln r` over `window`.
pub fn spatial_fit(grid: &Grid, values: &[f64], window: (f64, f64), opts: SpatialFitOptions) -> Result<DecayFit> {
    let limit = opts.max_radius_fraction * grid.half_width();
    if window.1 > limit * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "fit window reaches r = {}, beyond the interior limit {limit}",
            window.1
        )));
    }
    let bins = opts
        .bins
        .unwrap_or_else(|| (((window.1 - window.0) / grid.spacing()).floor() as usize).clamp(MIN_POINTS, 48));
    let pts = shell_maxima(grid, values, window, bins);
    fit_points(FitKind::Spatial, &pts, window)
}

/// Slope of `ln v` against `ln t` over `window`.
pub fn temporal_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit> {
    fit_points(FitKind::Temporal, series, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_pure_power_law_in_space() {
        let g = Grid::new(2, 256, 64.0).unwrap();
        let geo = g.geometry();
        let v: Vec<f64> = geo
            .radius
            .iter()
            .map(|&r| if r > 0.0 { r.powi(-3) } else { 0.0 })
            .collect();
        let fit = spatial_fit(&g, &v, (2.0, 16.0), SpatialFitOptions::default()).unwrap();
        assert!((fit.slope + 3.0).abs() < 0.02, "{}", fit.slope);
        assert!(fit.r_squared > 0.999);
        assert!(fit.points.len() >= MIN_POINTS);
    }

    #[test]
    fn heat_kernel_temporal_slope() {
        let x2 = 1.0;
        let series: Vec<(f64, f64)> = (0..40)
            .map(|k| {
                let t = 10.0 * 10f64.powf(k as f64 / 39.0);
                let g = (4.0 * std::f64::consts::PI * t).powi(-1) * (-x2 / (4.0 * t)).exp();
                (t, g)
            })
            .collect();
        let fit = temporal_fit(&series, (10.0, 100.0)).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.01);
    }

    #[test]
    fn underflow_and_bad_windows() {
        let zeros: Vec<(f64, f64)> = (1..20).map(|t| (t as f64, 0.0)).collect();
        assert!(matches!(
            temporal_fit(&zeros, (1.0, 20.0)),
            Err(Error::WindowUnderflow(_))
        ));
        let g = Grid::new(2, 64, 16.0).unwrap();
        let v = vec![1.0; g.len()];
        assert!(spatial_fit(&g, &v, (1.0, 8.0), SpatialFitOptions::default()).is_err());
    }
}
