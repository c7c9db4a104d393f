//! Heat kernel derivatives and the kernel `F` of `e^{tΔ} ℙ div`.
//!
//! `F` is synthesised from its symbol
//! `exp(-t|ξ|²) (iξ_l)(δ_{jk} - ξ_j ξ_k/|ξ|²)` at `t = 1` on a fine grid
//! (the profile `Φ`) and evaluated at other times through the self-similar
//! scaling `F(x, t) = t^{-(n+1)/2} Φ(x/√t)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::inverse_many;
use crate::fit::{spatial_fit, DecayFit, SpatialFitOptions};
use crate::grid::Grid;
use crate::multi_index::{indices_up_to, MultiIndex};
use crate::quadrature::gauss_legendre;

/// Bumped whenever the symbol or the sampling convention changes.
pub const SYMBOL_VERSION: u32 = 1;

/// Physicists' Hermite polynomial `H_k(y)`.
fn hermite(k: usize, y: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * y);
    if k == 0 {
        return h0;
    }
    for j in 1..k {
        let h2 = 2.0 * y * h1 - 2.0 * j as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `∂^α g_t(x)` with `g_t(x) = (4πt)^{-n/2} exp(-|x|²/4t)`.
pub fn heat_kernel_deriv(x: &[f64], t: f64, alpha: &MultiIndex) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("heat kernel time {t} must be positive")));
    }
    if alpha.dim() != x.len() {
        return Err(Error::InvalidInput("multi-index and point dimensions differ".into()));
    }
    let s = (4.0 * t).sqrt();
    let mut v = 1.0;
    for (&xi, &k) in x.iter().zip(&alpha.0) {
        let y = xi / s;
        let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
        v *= sign * s.powi(-(k as i32)) * hermite(k, y) * (-y * y).exp() / (PI * 4.0 * t).sqrt();
    }
    Ok(v)
}

/// Sampled profile `Φ = F(·, 1)` on a centred grid.
///
/// Only the entries with `j ≤ k` are stored (`F_{j;k,l} = F_{k;j,l}`).
#[derive(Debug, Clone)]
pub struct OseenProfile {
    grid: Grid,
    /// `data[slot(j, k, l)][p]`
    data: Vec<Vec<f64>>,
    /// Grid (trapezoid) value of `∫ |Φ|` with the Frobenius norm.
    pub l1_norm: f64,
    pub symbol_version: u32,
}

fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

fn pair_index(n: usize, j: usize, k: usize) -> usize {
    let (a, b) = if j <= k { (j, k) } else { (k, j) };
    // Row-major upper triangle.
    a * n - a * (a + 1) / 2 + b
}

fn pair_of(n: usize, idx: usize) -> (usize, usize) {
    let mut c = 0;
    for a in 0..n {
        for b in a..n {
            if c == idx {
                return (a, b);
            }
            c += 1;
        }
    }
    unreachable!("pair index out of range")
}

/// Direct synthesis of the stored entries of `F(·, t)` on `grid`, sampled at
/// the grid coordinates (origin at index `N/2`).
pub fn synthesize(grid: &Grid, t: f64) -> Result<Vec<Vec<f64>>> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("kernel time {t} must be positive")));
    }
    let n = grid.dim();
    let waves = grid.waves();
    let mut idx = vec![0; n];
    // exp(-t|ξ|²) · (-1)^{Σ k_a} / h^n: the shift puts the origin at N/2.
    let base: Vec<f64> = (0..grid.len())
        .map(|p| {
            grid.unflatten(p, &mut idx);
            let parity: usize = idx.iter().sum();
            let sign = if parity % 2 == 1 { -1.0 } else { 1.0 };
            sign * (-t * waves.k2[p]).exp() / grid.cell_volume()
        })
        .collect();
    let slots = pair_count(n) * n;
    let spectra: Vec<Vec<Complex64>> = (0..slots)
        .into_par_iter()
        .map(|s| {
            let (j, k) = pair_of(n, s / n);
            let l = s % n;
            (0..grid.len())
                .map(|p| {
                    let xi = waves.at(p);
                    let k2: f64 = xi.iter().map(|v| v * v).sum();
                    if k2 == 0.0 {
                        return Complex64::new(0.0, 0.0);
                    }
                    let proj = if j == k { 1.0 } else { 0.0 } - xi[j] * xi[k] / k2;
                    Complex64::new(0.0, base[p] * xi[l] * proj)
                })
                .collect()
        })
        .collect();
    Ok(inverse_many(grid, spectra))
}

/// Grid options for [`build_oseen_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileGridSpec {
    pub size: usize,
    pub half_width: f64,
    /// Radial window that must fit for the tail check.
    pub tail_window: (f64, f64),
}

impl ProfileGridSpec {
    pub fn default_for(n: usize) -> Self {
        match n {
            3 => ProfileGridSpec {
                size: 128,
                half_width: 16.0,
                tail_window: (3.0, 10.0),
            },
            _ => ProfileGridSpec {
                size: 1024,
                half_width: 32.0,
                tail_window: (5.0, 20.0),
            },
        }
    }
}

/// Largest admissible tail radius as a fraction of `L`.
pub const TAIL_FRACTION: f64 = 0.75;

pub fn build_oseen_profile(n: usize, spec: &ProfileGridSpec) -> Result<OseenProfile> {
    if !(2..=3).contains(&n) {
        return Err(Error::InvalidInput(format!("kernel profile needs n = 2 or 3, got {n}")));
    }
    let grid = Grid::new(n, spec.size, spec.half_width)?;
    let (lo, hi) = spec.tail_window;
    if !(lo > 0.0 && hi > lo) || hi > TAIL_FRACTION * spec.half_width {
        return Err(Error::GridExtent(format!(
            "tail window [{lo}, {hi}] does not fit in [0, {}]",
            TAIL_FRACTION * spec.half_width
        )));
    }
    if grid.spacing() * 4.0 > lo {
        return Err(Error::GridExtent(format!(
            "spacing {} too coarse for a tail window starting at {lo}",
            grid.spacing()
        )));
    }
    let data = synthesize(&grid, 1.0)?;
    let mut profile = OseenProfile {
        grid,
        data,
        l1_norm: 0.0,
        symbol_version: SYMBOL_VERSION,
    };
    profile.l1_norm = profile.frobenius().iter().sum::<f64>() * grid.cell_volume();
    Ok(profile)
}

impl OseenProfile {
    /// Rebuild from stored entries (see [`OseenProfile::stored`]).
    pub fn from_parts(grid: Grid, data: Vec<Vec<f64>>, symbol_version: u32) -> Result<Self> {
        let n = grid.dim();
        if data.len() != pair_count(n) * n || data.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::InvalidInput("kernel profile data has the wrong shape".into()));
        }
        let mut p = OseenProfile {
            grid,
            data,
            l1_norm: 0.0,
            symbol_version,
        };
        p.l1_norm = p.frobenius().iter().sum::<f64>() * grid.cell_volume();
        Ok(p)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Stored entries, `j ≤ k`, ordered by `(j, k)` pair then `l`.
    pub fn stored(&self) -> &[Vec<f64>] {
        &self.data
    }

    /// `Φ_{j;k,l}` at grid point `p`.
    pub fn node(&self, j: usize, k: usize, l: usize, p: usize) -> f64 {
        let n = self.dim();
        self.data[pair_index(n, j, k) * n + l][p]
    }

    /// Frobenius norm of `Φ` at each grid point.
    pub fn frobenius(&self) -> Vec<f64> {
        let n = self.dim();
        (0..self.grid.len())
            .map(|p| {
                let mut s = 0.0;
                for (slot, c) in self.data.iter().enumerate() {
                    let (j, k) = pair_of(n, slot / n);
                    let mult = if j == k { 1.0 } else { 2.0 };
                    s += mult * c[p] * c[p];
                }
                s.sqrt()
            })
            .collect()
    }

    /// Largest `|y|` at which cubic interpolation is available in every
    /// direction.
    pub fn interpolation_radius(&self) -> f64 {
        self.grid.half_width() - 2.0 * self.grid.spacing()
    }

    /// Tensor-product cubic interpolation of `Φ` at `y`; fills the full
    /// `n³` tensor, `out[j n² + k n + l]`.
    pub fn interpolate(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let h = self.grid.spacing();
        let l = self.grid.half_width();
        let size = self.grid.size();
        let mut base = [0usize; 3];
        let mut w = [[0.0f64; 4]; 3];
        for a in 0..n {
            let u = (y[a] + l) / h;
            let i = u.floor();
            if !(i >= 1.0 && (i as usize) + 2 < size) {
                return Err(Error::OutOfGrid(format!(
                    "coordinate {} outside the interpolation range ±{}",
                    y[a],
                    self.interpolation_radius()
                )));
            }
            let s = u - i;
            base[a] = i as usize - 1;
            w[a] = [
                -s * (s - 1.0) * (s - 2.0) / 6.0,
                (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
                -(s + 1.0) * s * (s - 2.0) / 2.0,
                (s + 1.0) * s * (s - 1.0) / 6.0,
            ];
        }
        let stored = self.data.len();
        let mut acc = vec![0.0; stored];
        let mut idx = [0usize; 3];
        let stencil = 4usize.pow(n as u32);
        for q in 0..stencil {
            let mut weight = 1.0;
            let mut r = q;
            for a in (0..n).rev() {
                let o = r % 4;
                r /= 4;
                idx[a] = base[a] + o;
                weight *= w[a][o];
            }
            let p = self.grid.flatten(&idx[..n]);
            for (s, c) in acc.iter_mut().zip(&self.data) {
                *s += weight * c[p];
            }
        }
        for j in 0..n {
            for k in 0..n {
                for ll in 0..n {
                    out[(j * n + k) * n + ll] = acc[pair_index(n, j, k) * n + ll];
                }
            }
        }
        Ok(())
    }
}

/// `F(x, t) = t^{-(n+1)/2} Φ(x/√t)` as a full `n³` tensor.
pub fn eval_f(x: &[f64], t: f64, profile: &OseenProfile) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("kernel time {t} must be positive")));
    }
    let n = profile.dim();
    if x.len() != n {
        return Err(Error::InvalidInput("point dimension does not match the profile".into()));
    }
    let st = t.sqrt();
    let y: Vec<f64> = x.iter().map(|v| v / st).collect();
    let mut out = vec![0.0; n * n * n];
    profile.interpolate(&y, &mut out)?;
    let scale = t.powf(-((n + 1) as f64) / 2.0);
    for v in out.iter_mut() {
        *v *= scale;
    }
    Ok(out)
}

fn frobenius(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit directions and weights for integrating over the unit sphere
/// (circle for `n = 2`).
fn sphere_rule(n: usize, resolution: usize) -> Vec<(Vec<f64>, f64)> {
    if n == 2 {
        (0..resolution)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / resolution as f64;
                (vec![th.cos(), th.sin()], 2.0 * PI / resolution as f64)
            })
            .collect()
    } else {
        let (zs, wz) = gauss_legendre(resolution / 2);
        let mut out = Vec::new();
        for (z, w) in zs.iter().zip(&wz) {
            let s = (1.0 - z * z).sqrt();
            for i in 0..resolution {
                let ph = 2.0 * PI * i as f64 / resolution as f64;
                out.push((vec![s * ph.cos(), s * ph.sin(), *z], w * 2.0 * PI / resolution as f64));
            }
        }
        out
    }
}

/// Options for the quadrature of `‖F(·, t)‖₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Options {
    /// Integrate `|F|` over `|x| ≤ ρ√t`; beyond, use the fitted tail.
    pub rho: f64,
    /// First radial breakpoint (physical units).
    pub r_min: f64,
    /// Ratio of consecutive radial breakpoints.
    pub ratio: f64,
    pub nodes_per_panel: usize,
    pub angular: usize,
}

impl Default for L1Options {
    fn default() -> Self {
        L1Options {
            rho: 16.0,
            r_min: 1e-2,
            ratio: 1.25,
            nodes_per_panel: 8,
            angular: 256,
        }
    }
}

/// `‖F(·, t)‖₁` with the Frobenius norm.
///
/// The core `|x| ≤ ρ√t` is integrated in polar coordinates with radial
/// panels whose breakpoints `r_min·ratio^k` are fixed in physical space, so
/// different times use different nodes of `Φ`. The remainder uses the
/// `|Φ(y)| ~ c(θ)|y|^{-(n+1)}` tail: `∫_{|x|>ρ√t} |F| = t^{-1/2} ρ ∫ |Φ(ρθ)| dθ`.
pub fn kernel_l1_norm(profile: &OseenProfile, t: f64, opts: &L1Options) -> Result<f64> {
    let n = profile.dim();
    let rho = opts.rho;
    if rho > profile.interpolation_radius() {
        return Err(Error::GridExtent(format!(
            "L1 radius {rho} exceeds the profile interpolation radius {}",
            profile.interpolation_radius()
        )));
    }
    let r_max = rho * t.sqrt();
    let mut breaks = vec![0.0];
    let mut r = opts.r_min;
    while r < r_max {
        breaks.push(r);
        r *= opts.ratio;
    }
    breaks.push(r_max);
    let (gx, gw) = gauss_legendre(opts.nodes_per_panel);
    let dirs = sphere_rule(n, opts.angular);
    let mut radial = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (x, wt) in gx.iter().zip(&gw) {
            radial.push((0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * wt));
        }
    }
    let core: f64 = radial
        .par_iter()
        .map(|&(r, wr)| {
            let mut shell = 0.0;
            let mut pt = vec![0.0; n];
            for (d, wd) in &dirs {
                for a in 0..n {
                    pt[a] = r * d[a];
                }
                shell += wd * frobenius(&eval_f(&pt, t, profile)?);
            }
            Ok(wr * r.powi(n as i32 - 1) * shell)
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    let mut ring = 0.0;
    let mut out = vec![0.0; n * n * n];
    for (d, wd) in &dirs {
        let y: Vec<f64> = d.iter().map(|v| v * rho).collect();
        profile.interpolate(&y, &mut out)?;
        ring += wd * frobenius(&out);
    }
    Ok(core + t.powf(-0.5) * rho * ring)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatConstant {
    pub alpha: MultiIndex,
    /// `sup |∂^α g_t(x)| |x|^{n+|α|}`
    pub space: f64,
    /// `sup |∂^α g_t(x)| t^{(n+|α|)/2}`
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimateReport {
    pub dim: usize,
    pub profile_grid: Grid,
    pub times: Vec<f64>,
    /// Sampling window in the self-similar variable `|x|/√t`.
    pub window: f64,
    /// Per time: `sup |F| |x|^{n+1}`.
    pub space_constant: Vec<f64>,
    /// Per time: `sup |F| t^{(n+1)/2}`.
    pub time_constant: Vec<f64>,
    /// Per time: `sup |F| |x|^{(n+1)/2} t^{(n+1)/4}`.
    pub mixed_constant: Vec<f64>,
    /// `sup |∂_a Φ| |y|^{n+2}` and `sup |∂_a Φ|` per axis.
    pub derivative_constants: Vec<(f64, f64)>,
    pub l1_norms: Vec<f64>,
    /// `‖F(·,t)‖₁ t^{1/2}`
    pub l1_scaled: Vec<f64>,
    /// `(max - min)/mean` of `l1_scaled`.
    pub l1_spread: f64,
    pub l1_options: L1Options,
    /// `|F(0, t)| t^{(n+1)/2}` per time.
    pub origin_scaled: Vec<f64>,
    pub heat_constants: Vec<HeatConstant>,
    /// `sup g_t(x) |x|^{n/2} t^{n/4}`
    pub heat_mixed_constant: f64,
    pub tail_fit: Option<DecayFit>,
}

/// Tail slope of `|Φ|` over `window`.
pub fn profile_tail_fit(profile: &OseenProfile, window: (f64, f64)) -> Result<DecayFit> {
    let frac = window.1 / profile.grid.half_width();
    spatial_fit(
        &profile.grid,
        &profile.frobenius(),
        window,
        SpatialFitOptions {
            max_radius_fraction: frac.max(0.25),
            bins: Some(32),
        },
    )
}

pub fn kernel_bounds_report(
    profile: &OseenProfile,
    times: &[f64],
    tail_window: Option<(f64, f64)>,
    l1: L1Options,
) -> Result<KernelEstimateReport> {
    if times.is_empty() {
        return Err(Error::InvalidInput("kernel report needs at least one time".into()));
    }
    if times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidInput("kernel report times must be positive".into()));
    }
    let n = profile.dim();
    let grid = profile.grid;
    let geo = grid.geometry();
    let window = grid.half_width() / 2.0;
    let nf = (n + 1) as f64;
    // Physical sample points: profile nodes, thinned to at most ~64k.
    let stride = ((grid.len() as f64 / 65536.0).powf(1.0 / n as f64).ceil() as usize).max(1);
    let mut idx = vec![0; n];
    let samples: Vec<usize> = (0..grid.len())
        .filter(|&p| {
            grid.unflatten(p, &mut idx);
            idx.iter().all(|i| i % stride == 0)
        })
        .collect();
    let mut space_constant = Vec::new();
    let mut time_constant = Vec::new();
    let mut mixed_constant = Vec::new();
    let mut origin_scaled = Vec::new();
    for &t in times {
        let st = t.sqrt();
        let vals: Vec<(f64, f64)> = samples
            .par_iter()
            .filter(|&&p| geo.radius[p] > 0.0 && geo.radius[p] / st <= window)
            .map(|&p| {
                let f = eval_f(geo.point(p), t, profile)?;
                Ok((geo.radius[p], frobenius(&f)))
            })
            .collect::<Result<_>>()?;
        space_constant.push(vals.iter().map(|(r, f)| f * r.powf(nf)).fold(0.0, f64::max));
        time_constant.push(vals.iter().map(|(_, f)| f * t.powf(nf / 2.0)).fold(0.0, f64::max));
        mixed_constant.push(
            vals.iter()
                .map(|(r, f)| f * r.powf(nf / 2.0) * t.powf(nf / 4.0))
                .fold(0.0, f64::max),
        );
        let f0 = eval_f(&vec![0.0; n], t, profile)?;
        origin_scaled.push(frobenius(&f0) * t.powf(nf / 2.0));
    }
    // First derivatives of Φ by fourth-order central differences.
    let h = grid.spacing();
    let size = grid.size();
    let frob = profile.frobenius();
    let stored: Vec<&Vec<f64>> = profile.data.iter().collect();
    let derivative_constants: Vec<(f64, f64)> = (0..n)
        .map(|a| {
            let mut idx = vec![0; n];
            let mut sp: f64 = 0.0;
            let mut tm: f64 = 0.0;
            for p in 0..grid.len() {
                let r = geo.radius[p];
                if r > window || frob[p] == 0.0 {
                    continue;
                }
                grid.unflatten(p, &mut idx);
                let i = idx[a];
                if i < 2 || i + 2 >= size {
                    continue;
                }
                let nb = |o: isize| {
                    let mut j = idx.clone();
                    j[a] = (i as isize + o) as usize;
                    grid.flatten(&j)
                };
                let (m2, m1, p1, p2) = (nb(-2), nb(-1), nb(1), nb(2));
                let mut s = 0.0;
                for (slot, c) in stored.iter().enumerate() {
                    let (j, k) = pair_of(n, slot / n);
                    let mult = if j == k { 1.0 } else { 2.0 };
                    let d = (c[m2] - 8.0 * c[m1] + 8.0 * c[p1] - c[p2]) / (12.0 * h);
                    s += mult * d * d;
                }
                let d = s.sqrt();
                sp = sp.max(d * r.powi(n as i32 + 2));
                tm = tm.max(d);
            }
            (sp, tm)
        })
        .collect();
    let l1_norms: Vec<f64> = times
        .iter()
        .map(|&t| kernel_l1_norm(profile, t, &l1))
        .collect::<Result<_>>()?;
    let l1_scaled: Vec<f64> = l1_norms.iter().zip(times).map(|(v, t)| v * t.sqrt()).collect();
    let mean = l1_scaled.iter().sum::<f64>() / l1_scaled.len() as f64;
    let spread = (l1_scaled.iter().copied().fold(f64::MIN, f64::max)
        - l1_scaled.iter().copied().fold(f64::MAX, f64::min))
        / mean;
    let heat_constants = heat_constants(n, 2)?;
    let heat_mixed_constant = radial_scan(n, |x, r| {
        Ok(heat_kernel_deriv(x, 1.0, &MultiIndex::zero(n))? * r.powf(n as f64 / 2.0))
    })?;
    let tail_fit = match tail_window {
        Some(w) => Some(profile_tail_fit(profile, w)?),
        None => None,
    };
    Ok(KernelEstimateReport {
        dim: n,
        profile_grid: grid,
        times: times.to_vec(),
        window,
        space_constant,
        time_constant,
        mixed_constant,
        derivative_constants,
        l1_norms,
        l1_scaled,
        l1_spread: spread,
        l1_options: l1,
        origin_scaled,
        heat_constants,
        heat_mixed_constant,
        tail_fit,
    })
}

/// `sup f(x, |x|)` over rays in a few directions, `0 < |x| ≤ 30`.
fn radial_scan(n: usize, f: impl Fn(&[f64], f64) -> Result<f64>) -> Result<f64> {
    let mut best: f64 = 0.0;
    let mut x = vec![0.0; n];
    for (d, _) in sphere_rule(n, 16) {
        for i in 1..=3000 {
            let r = i as f64 * 0.01;
            for a in 0..n {
                x[a] = r * d[a];
            }
            best = best.max(f(&x, r)?.abs());
        }
    }
    Ok(best)
}

/// Measured heat kernel constants for `|α| ≤ order` at `t = 1` (both
/// bounds are scale invariant).
pub fn heat_constants(n: usize, order: usize) -> Result<Vec<HeatConstant>> {
    indices_up_to(n, order)
        .into_iter()
        .map(|alpha| {
            let k = alpha.order();
            let space = radial_scan(
                n,
                |x, r| Ok(heat_kernel_deriv(x, 1.0, &alpha)? * r.powi((n + k) as i32)),
            )?;
            let time = radial_scan(n, |x, _| heat_kernel_deriv(x, 1.0, &alpha))?;
            Ok(HeatConstant { alpha, space, time })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_profile() -> OseenProfile {
        build_oseen_profile(
            2,
            &ProfileGridSpec {
                size: 256,
                half_width: 16.0,
                tail_window: (2.0, 8.0),
            },
        )
        .unwrap()
    }

    #[test]
    fn heat_kernel_values() {
        let t = 1.0 / (4.0 * PI);
        let v = heat_kernel_deriv(&[0.0, 0.0], t, &MultiIndex::zero(2)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let x = [0.7, -0.4];
        let g = heat_kernel_deriv(&x, 0.3, &MultiIndex::zero(2)).unwrap();
        let d1 = heat_kernel_deriv(&x, 0.3, &MultiIndex(vec![1, 0])).unwrap();
        assert!((d1 + x[0] / 0.6 * g).abs() < 1e-15);
        assert!(heat_kernel_deriv(&x, 0.0, &MultiIndex::zero(2)).is_err());
    }

    #[test]
    fn heat_kernel_second_derivative_matches_finite_differences() {
        let h = 1e-4;
        let g = |x: f64| heat_kernel_deriv(&[x, 0.0], 1.0, &MultiIndex::zero(2)).unwrap();
        let fd = (g(1.0 + h) - 2.0 * g(1.0) + g(1.0 - h)) / (h * h);
        let exact = heat_kernel_deriv(&[1.0, 0.0], 1.0, &MultiIndex(vec![2, 0])).unwrap();
        assert!(((fd - exact) / exact).abs() < 1e-7);
    }

    #[test]
    fn profile_parity_and_divergence_free_symbol() {
        let prof = small_profile();
        let g = *prof.grid();
        let size = g.size();
        let mut idx = vec![0; 2];
        let mut worst: f64 = 0.0;
        for p in 0..g.len() {
            g.unflatten(p, &mut idx);
            let q = g.flatten(&[(size - idx[0]) % size, (size - idx[1]) % size]);
            for c in prof.stored() {
                worst = worst.max((c[p] + c[q]).abs());
            }
        }
        assert!(worst < 1e-14, "{worst}");
        // ∫Φ = 0 componentwise.
        for c in prof.stored() {
            assert!(c.iter().sum::<f64>().abs() * g.cell_volume() < 1e-12);
        }
    }

    #[test]
    fn interpolation_matches_direct_trigonometric_sum() {
        // Oracle: the continuous inverse transform, by a direct sum over the
        // same modes, evaluated at off-grid points.
        let prof = small_profile();
        let g = *prof.grid();
        let waves = g.waves();
        let vol = (2.0 * g.half_width()).powi(2);
        let fmax = prof.frobenius().into_iter().fold(0.0, f64::max);
        let mut out = vec![0.0; 8];
        for y in [[0.37, -0.81], [1.93, 2.41], [-3.3, 0.05]] {
            prof.interpolate(&y, &mut out).unwrap();
            // Entry (j, k, l) = (0, 1, 0).
            let mut s = 0.0;
            for p in 0..g.len() {
                let xi = waves.at(p);
                let k2 = xi[0] * xi[0] + xi[1] * xi[1];
                if k2 == 0.0 {
                    continue;
                }
                let sym = (-waves.k2[p]).exp() * xi[0] * (-xi[0] * xi[1] / k2);
                // Re(i·sym·e^{iξ·y}) = -sym·sin(ξ·y)
                s -= sym * (xi[0] * y[0] + xi[1] * y[1]).sin();
            }
            s /= vol;
            assert!((out[2] - s).abs() < 1e-5 * fmax, "{} vs {s}", out[2]);
        }
    }

    #[test]
    fn scaling_identities() {
        let prof = small_profile();
        let x = [0.9, -1.7];
        let f1 = eval_f(&x, 1.0, &prof).unwrap();
        let mut phi = vec![0.0; 8];
        prof.interpolate(&x, &mut phi).unwrap();
        assert_eq!(f1, phi);
        let f4 = eval_f(&x, 4.0, &prof).unwrap();
        prof.interpolate(&[0.45, -0.85], &mut phi).unwrap();
        for (a, b) in f4.iter().zip(&phi) {
            assert!((a - b * 4f64.powf(-1.5)).abs() < 1e-15);
        }
        assert!(eval_f(&[100.0, 0.0], 1.0, &prof).is_err());
    }

    #[test]
    fn resynthesis_at_later_time_matches_scaled_profile() {
        // F(·, 4) on a box twice as large with the same N lands exactly on
        // profile nodes.
        let prof = small_profile();
        let g = *prof.grid();
        let g2 = Grid::new(2, g.size(), 2.0 * g.half_width()).unwrap();
        let direct = synthesize(&g2, 4.0).unwrap();
        let geo = g2.geometry();
        let scale = prof.frobenius().into_iter().fold(0.0, f64::max) * 4f64.powf(-1.5);
        let mut worst: f64 = 0.0;
        for p in 0..g2.len() {
            if geo.radius[p] > g2.half_width() / 2.0 {
                continue;
            }
            for (s, c) in direct.iter().enumerate() {
                let want = prof.stored()[s][p] * 4f64.powf(-1.5);
                worst = worst.max((c[p] - want).abs() / scale);
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn tail_window_must_fit() {
        let spec = ProfileGridSpec {
            size: 64,
            half_width: 8.0,
            tail_window: (5.0, 20.0),
        };
        assert!(matches!(build_oseen_profile(2, &spec), Err(Error::GridExtent(_))));
    }

    #[test]
    fn pair_indexing_round_trips() {
        for n in 2..=3 {
            for i in 0..pair_count(n) {
                let (a, b) = pair_of(n, i);
                assert_eq!(pair_index(n, a, b), i);
                assert_eq!(pair_index(n, b, a), i);
            }
        }
    }
}
