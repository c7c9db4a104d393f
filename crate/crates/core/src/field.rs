//! Vector and tensor fields sampled on a [`Grid`], with spectral operators.

use std::sync::OnceLock;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::multi_index::indices_up_to;

pub type Spectrum = Vec<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Forward transform of a real array.
pub fn forward(grid: &Grid, values: &[f64]) -> Spectrum {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    grid.fft().forward(&mut buf);
    buf
}

/// Forward transforms of two real arrays through one complex transform.
pub fn forward_pair(grid: &Grid, a: &[f64], b: &[f64]) -> (Spectrum, Spectrum) {
    let mut z: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
    grid.fft().forward(&mut z);
    let waves = grid.waves();
    let mut sa = vec![Complex64::new(0.0, 0.0); z.len()];
    let mut sb = vec![Complex64::new(0.0, 0.0); z.len()];
    for (p, (a, b)) in sa.iter_mut().zip(sb.iter_mut()).enumerate() {
        let zc = z[waves.negated[p]].conj();
        *a = 0.5 * (z[p] + zc);
        *b = -0.5 * I * (z[p] - zc);
    }
    (sa, sb)
}

/// Real part of the normalised inverse transform.
pub fn inverse(grid: &Grid, mut spec: Spectrum) -> Vec<f64> {
    grid.fft().inverse(&mut spec);
    spec.into_iter().map(|c| c.re).collect()
}

/// Inverse transforms of two Hermitian spectra through one complex transform.
pub fn inverse_pair(grid: &Grid, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let mut z: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| x + I * y).collect();
    grid.fft().inverse(&mut z);
    (z.iter().map(|c| c.re).collect(), z.iter().map(|c| c.im).collect())
}

/// Transform many real arrays, pairing them up.
pub fn forward_many(grid: &Grid, arrays: &[&[f64]]) -> Vec<Spectrum> {
    let chunks: Vec<&[&[f64]]> = arrays.chunks(2).collect();
    let out: Vec<Vec<Spectrum>> = chunks
        .par_iter()
        .map(|c| {
            if c.len() == 2 {
                let (a, b) = forward_pair(grid, c[0], c[1]);
                vec![a, b]
            } else {
                vec![forward(grid, c[0])]
            }
        })
        .collect();
    out.into_iter().flatten().collect()
}

/// Inverse-transform many Hermitian spectra, pairing them up.
pub fn inverse_many(grid: &Grid, spectra: Vec<Spectrum>) -> Vec<Vec<f64>> {
    let chunks: Vec<&[Spectrum]> = spectra.chunks(2).collect();
    let out: Vec<Vec<Vec<f64>>> = chunks
        .par_iter()
        .map(|c| {
            if c.len() == 2 {
                let (a, b) = inverse_pair(grid, &c[0], &c[1]);
                vec![a, b]
            } else {
                vec![inverse(grid, c[0].clone())]
            }
        })
        .collect();
    out.into_iter().flatten().collect()
}

/// `(I - ξξᵀ/|ξ|²) û` in place; the zero mode is left unchanged.
pub fn leray_in_place(grid: &Grid, comps: &mut [Spectrum]) {
    let waves = grid.waves();
    let n = grid.dim();
    assert_eq!(comps.len(), n, "Leray projection needs a vector field");
    for p in 0..grid.len() {
        let xi = waves.at(p);
        let k2: f64 = xi.iter().map(|x| x * x).sum();
        if k2 == 0.0 {
            continue;
        }
        let mut dot = Complex64::new(0.0, 0.0);
        for a in 0..n {
            dot += xi[a] * comps[a][p];
        }
        dot /= k2;
        for a in 0..n {
            comps[a][p] -= xi[a] * dot;
        }
    }
}

/// Multiply by `exp(-t|ξ|²)` in place.
pub fn heat_in_place(grid: &Grid, comps: &mut [Spectrum], t: f64) {
    if t == 0.0 {
        return;
    }
    let waves = grid.waves();
    for c in comps.iter_mut() {
        for (v, k2) in c.iter_mut().zip(&waves.k2) {
            *v *= (-t * k2).exp();
        }
    }
}

/// Spectral divergence of a matrix field: `(div A)_i = Σ_j ∂_j A_{ji}`.
/// Components are stored row-major, `A_{ji}` at index `j * n + i`.
pub fn matrix_divergence(grid: &Grid, entries: &[Spectrum]) -> Vec<Spectrum> {
    let n = grid.dim();
    assert_eq!(entries.len(), n * n, "matrix field needs n² components");
    let waves = grid.waves();
    (0..n)
        .map(|i| {
            (0..grid.len())
                .map(|p| {
                    let xi = waves.at(p);
                    let mut s = Complex64::new(0.0, 0.0);
                    for j in 0..n {
                        s += xi[j] * entries[j * n + i][p];
                    }
                    I * s
                })
                .collect()
        })
        .collect()
}

/// Spectral divergence of a vector field.
pub fn vector_divergence(grid: &Grid, comps: &[Spectrum]) -> Spectrum {
    let waves = grid.waves();
    (0..grid.len())
        .map(|p| {
            let xi = waves.at(p);
            let mut s = Complex64::new(0.0, 0.0);
            for (a, c) in comps.iter().enumerate() {
                s += xi[a] * c[p];
            }
            I * s
        })
        .collect()
}

/// Zero the modes outside the 2/3 band in place.
pub fn dealias_in_place(grid: &Grid, comps: &mut [Spectrum]) {
    let waves = grid.waves();
    for c in comps.iter_mut() {
        for (v, &keep) in c.iter_mut().zip(&waves.dealias) {
            if !keep {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// An `components`-valued field sampled on a grid. Matrix fields store their
/// entries row-major.
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Grid,
    data: Vec<Vec<f64>>,
    spectrum: OnceLock<Vec<Spectrum>>,
}

impl PartialEq for GridField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.data == other.data
    }
}

impl GridField {
    pub fn new(grid: Grid, data: Vec<Vec<f64>>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput("field needs at least one component".into()));
        }
        if let Some(c) = data.iter().find(|c| c.len() != grid.len()) {
            return Err(Error::InvalidInput(format!(
                "component has {} samples, grid has {}",
                c.len(),
                grid.len()
            )));
        }
        Ok(GridField {
            grid,
            data,
            spectrum: OnceLock::new(),
        })
    }

    pub fn zeros(grid: Grid, components: usize) -> Self {
        GridField {
            grid,
            data: vec![vec![0.0; grid.len()]; components],
            spectrum: OnceLock::new(),
        }
    }

    /// Sample `f(x, out)` at every grid point.
    pub fn from_fn(grid: Grid, components: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let geo = grid.geometry();
        let mut data = vec![vec![0.0; grid.len()]; components];
        let mut out = vec![0.0; components];
        for p in 0..grid.len() {
            f(geo.point(p), &mut out);
            for (c, v) in data.iter_mut().zip(&out) {
                c[p] = *v;
            }
        }
        GridField {
            grid,
            data,
            spectrum: OnceLock::new(),
        }
    }

    pub fn from_spectrum(grid: Grid, spectrum: Vec<Spectrum>) -> Self {
        let data = inverse_many(&grid, spectrum.clone());
        let cell = OnceLock::new();
        let _ = cell.set(spectrum);
        GridField {
            grid,
            data,
            spectrum: cell,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.data.len()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Vec<f64>> {
        self.data
    }

    /// Spectral twin, computed on first use.
    pub fn spectrum(&self) -> &[Spectrum] {
        self.spectrum.get_or_init(|| {
            let refs: Vec<&[f64]> = self.data.iter().map(|c| c.as_slice()).collect();
            forward_many(&self.grid, &refs)
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridField::new(
            self.grid,
            self.data.iter().map(|c| c.iter().map(|&v| f(v)).collect()).collect(),
        )
        .expect("shape preserved")
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &GridField) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(GridField::new(
            self.grid,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + s * y).collect())
                .collect(),
        )
        .expect("shape preserved"))
    }

    pub fn check_compatible(&self, other: &GridField) -> Result<()> {
        if self.grid != other.grid || self.components() != other.components() {
            return Err(Error::InvalidInput(
                "fields live on different grids or have different shapes".into(),
            ));
        }
        Ok(())
    }

    /// Euclidean norm over components at every point.
    pub fn magnitude(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|p| self.data.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt())
            .collect()
    }

    /// `max_x |u(x)|` with the Euclidean norm over components.
    pub fn sup_norm(&self) -> f64 {
        self.magnitude().into_iter().fold(0.0, f64::max)
    }

    /// Largest absolute entry over all components.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// `∫ |u| dx` by the trapezoid rule.
    pub fn l1_norm(&self) -> f64 {
        self.magnitude().iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.data.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// `(1/len) Σ |û|²`, which equals `Σ |u|²` on the grid.
    pub fn spectral_energy(&self) -> f64 {
        let len = self.grid.len() as f64;
        self.spectrum()
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            / len
    }

    pub fn leray_project(&self) -> Result<Self> {
        self.require_vector()?;
        let mut spec = self.spectrum().to_vec();
        leray_in_place(&self.grid, &mut spec);
        Ok(GridField::from_spectrum(self.grid, spec))
    }

    pub fn heat_evolve(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!("heat time {t} must be nonnegative")));
        }
        if t == 0.0 {
            return Ok(self.clone());
        }
        let mut spec = self.spectrum().to_vec();
        heat_in_place(&self.grid, &mut spec, t);
        Ok(GridField::from_spectrum(self.grid, spec))
    }

    /// Spectral divergence of a vector field.
    pub fn divergence(&self) -> Result<Vec<f64>> {
        self.require_vector()?;
        Ok(inverse(&self.grid, vector_divergence(&self.grid, self.spectrum())))
    }

    /// `max |div u|` relative to `sup |u| · π/h`.
    pub fn divergence_ratio(&self) -> Result<f64> {
        let div = self.divergence()?;
        let kmax = std::f64::consts::PI / self.grid.spacing();
        let scale = self.sup_norm() * kmax;
        let d = div.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        Ok(if scale == 0.0 { d } else { d / scale })
    }

    fn require_vector(&self) -> Result<()> {
        if self.components() != self.grid.dim() {
            return Err(Error::InvalidInput(format!(
                "expected a vector field with {} components, found {}",
                self.grid.dim(),
                self.components()
            )));
        }
        Ok(())
    }
}

/// Generating scalar `ζ` for the initial datum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatumProfile {
    /// `exp(-|x|²/(2σ²))`; treated as supported in `|x| ≤ 8.6σ`, beyond
    /// which it is below `1e-16`.
    Gaussian { sigma: f64 },
    /// `exp(-1/(1-|x|²/R²))`, supported in `|x| ≤ R`.
    Bump { radius: f64 },
}

impl DatumProfile {
    pub fn support_radius(&self) -> f64 {
        match *self {
            DatumProfile::Gaussian { sigma } => 8.6 * sigma,
            DatumProfile::Bump { radius } => radius,
        }
    }

    pub fn value(&self, r2: f64) -> f64 {
        match *self {
            DatumProfile::Gaussian { sigma } => (-r2 / (2.0 * sigma * sigma)).exp(),
            DatumProfile::Bump { radius } => {
                let s = r2 / (radius * radius);
                if s >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - s)).exp()
                }
            }
        }
    }
}

/// `u₀ = A ∇^⊥ ∂₁^{m'} ζ / sup|∇^⊥ ∂₁^{m'} ζ|` (`n = 2`), or the curl of
/// `(0, 0, ∂₁^{m'} ζ)` in three dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatumSpec {
    pub profile: DatumProfile,
    /// `m'`; `None` uses the requested moment order.
    pub derivative_order: Option<usize>,
    /// Target `sup |u₀|`.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatumCertificate {
    pub moment_order: usize,
    pub derivative_order: usize,
    /// `max_{|α|≤m} |∫ x^α u₀| / ∫ (1+|x|)^{|α|} |u₀|`
    pub max_relative_moment: f64,
    /// `max |div u₀|` relative to `sup|u₀| · π/h`.
    pub divergence_ratio: f64,
    pub sup_norm: f64,
}

pub fn make_initial_datum(grid: &Grid, spec: &DatumSpec, m: usize) -> Result<(GridField, DatumCertificate)> {
    let n = grid.dim();
    if n == 1 {
        return Err(Error::InvalidInput("initial datum needs n = 2 or 3".into()));
    }
    if !(spec.amplitude >= 0.0 && spec.amplitude.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "amplitude {} must be finite and nonnegative",
            spec.amplitude
        )));
    }
    let window = grid.half_width() / 4.0;
    if spec.profile.support_radius() > window {
        return Err(Error::SupportTooLarge(format!(
            "radius {} exceeds L/4 = {window}",
            spec.profile.support_radius()
        )));
    }
    let mp = spec.derivative_order.unwrap_or(m);
    if mp < m {
        return Err(Error::InvalidInput(format!(
            "derivative order {mp} gives vanishing moments only up to order {mp} < {m}"
        )));
    }
    let zeta = GridField::from_fn(*grid, 1, |x, out| {
        out[0] = spec.profile.value(x.iter().map(|v| v * v).sum());
    });
    let waves = grid.waves();
    let zhat = &zeta.spectrum()[0];
    let eta: Spectrum = (0..grid.len())
        .map(|p| zhat[p] * (I * waves.at(p)[0]).powu(mp as u32))
        .collect();
    let deriv = |axis: usize| -> Spectrum { (0..grid.len()).map(|p| I * waves.at(p)[axis] * eta[p]).collect() };
    let mut comps = vec![deriv(1), deriv(0)];
    for v in comps[0].iter_mut() {
        *v = -*v;
    }
    if n == 3 {
        // curl(0, 0, η) = (∂₂η, -∂₁η, 0)
        for c in comps.iter_mut() {
            for v in c.iter_mut() {
                *v = -*v;
            }
        }
        comps.push(vec![Complex64::new(0.0, 0.0); grid.len()]);
    }
    let raw = GridField::from_spectrum(*grid, comps);
    let sup = raw.sup_norm();
    let u0 = if sup > 0.0 {
        raw.scaled(spec.amplitude / sup)
    } else {
        raw
    };
    let cert = DatumCertificate {
        moment_order: m,
        derivative_order: mp,
        max_relative_moment: max_relative_moment(&u0, m),
        divergence_ratio: u0.divergence_ratio()?,
        sup_norm: u0.sup_norm(),
    };
    Ok((u0, cert))
}

/// `max_{|α|≤m, c} |∫ x^α u_c| / ∫ (1+|x|)^{|α|} |u|`, zero for a zero field.
pub fn max_relative_moment(field: &GridField, m: usize) -> f64 {
    let grid = field.grid();
    let geo = grid.geometry();
    let mag = field.magnitude();
    let mut worst: f64 = 0.0;
    for alpha in indices_up_to(grid.dim(), m) {
        let k = alpha.order() as i32;
        let scale: f64 = (0..grid.len()).map(|p| (1.0 + geo.radius[p]).powi(k) * mag[p]).sum();
        if scale == 0.0 {
            continue;
        }
        for c in field.data() {
            let mom: f64 = (0..grid.len()).map(|p| alpha.monomial(geo.point(p)) * c[p]).sum();
            worst = worst.max(mom.abs() / scale);
        }
    }
    worst
}

/// Discrete weighted sup norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormReport {
    pub m: usize,
    /// `sup_x (1+|x|)^{n+1+m} |a(x)|`, for the first field.
    pub e_norm: f64,
    /// `sup_{t,x} (1+|x|)^{n+1+m} |u(x,t)|`
    pub space_weighted: f64,
    /// `sup_t (1+t)^{(n+1+m)/2} sup_x |u(x,t)|`
    pub time_weighted: f64,
    /// Radius beyond which points are excluded.
    pub window: f64,
}

impl WeightedNormReport {
    /// `max(space_weighted, time_weighted)`
    pub fn x_norm(&self) -> f64 {
        self.space_weighted.max(self.time_weighted)
    }
}

/// `sup_{|x| ≤ window} (1+|x|)^{n+1+m} |a(x)|` for a field given by its
/// pointwise magnitude.
pub fn space_weighted_sup(grid: &Grid, magnitude: &[f64], m: usize, window: f64) -> f64 {
    let geo = grid.geometry();
    let k = (grid.dim() + 1 + m) as i32;
    magnitude
        .iter()
        .zip(&geo.radius)
        .filter(|(_, &r)| r <= window)
        .map(|(v, r)| (1.0 + r).powi(k) * v)
        .fold(0.0, f64::max)
}

/// Weighted norms over a set of `(t, u(t))` snapshots, restricted to
/// `|x| ≤ L/2`.
pub fn weighted_norms(snapshots: &[(f64, &GridField)], m: usize) -> Result<WeightedNormReport> {
    let Some((_, first)) = snapshots.first() else {
        return Err(Error::InvalidInput("no snapshots given".into()));
    };
    let grid = *first.grid();
    let window = grid.half_width() / 2.0;
    let n = grid.dim();
    let mut space: f64 = 0.0;
    let mut time: f64 = 0.0;
    let mut e_norm = 0.0;
    for (i, (t, u)) in snapshots.iter().enumerate() {
        if *u.grid() != grid {
            return Err(Error::InvalidInput("snapshots live on different grids".into()));
        }
        let mag = u.magnitude();
        let s = space_weighted_sup(&grid, &mag, m, window);
        if i == 0 {
            e_norm = s;
        }
        space = space.max(s);
        let sup = mag.iter().copied().fold(0.0, f64::max);
        time = time.max((1.0 + t).powf((n + 1 + m) as f64 / 2.0) * sup);
    }
    Ok(WeightedNormReport {
        m,
        e_norm,
        space_weighted: space,
        time_weighted: time,
        window,
    })
}

/// `e^{tΔ}a` in free space by the grid (trapezoid) rule over the samples
/// of a compactly supported `a`; unaffected by periodic images.
#[derive(Debug, Clone)]
pub struct FreeSpaceHeat {
    dim: usize,
    points: Vec<f64>,
    values: Vec<Vec<f64>>,
    weight: f64,
}

impl FreeSpaceHeat {
    /// Keeps the samples with `|a| > 1e-18 · max|a|`.
    pub fn new(field: &GridField) -> Self {
        let grid = field.grid();
        let n = grid.dim();
        let geo = grid.geometry();
        let mag = field.magnitude();
        let cut = 1e-18 * mag.iter().copied().fold(0.0, f64::max);
        let mut points = Vec::new();
        let mut values = vec![Vec::new(); field.components()];
        for (p, &a) in mag.iter().enumerate() {
            if a > cut {
                points.extend_from_slice(geo.point(p));
                for (c, v) in values.iter_mut().enumerate() {
                    v.push(field.component(c)[p]);
                }
            }
        }
        FreeSpaceHeat {
            dim: n,
            points,
            values,
            weight: grid.cell_volume(),
        }
    }

    pub fn support_len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        let n = self.dim;
        let norm = self.weight / (4.0 * std::f64::consts::PI * t).powf(n as f64 / 2.0);
        let mut out = vec![0.0; self.values.len()];
        for (s, y) in self.points.chunks_exact(n).enumerate() {
            let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            let g = (-r2 / (4.0 * t)).exp();
            if g == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&self.values) {
                *o += g * v[s];
            }
        }
        for o in out.iter_mut() {
            *o *= norm;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        Grid::new(2, 32, 8.0).unwrap()
    }

    fn random_field(g: Grid, seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..2)
            .map(|_| (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        GridField::new(g, data).unwrap()
    }

    fn max_diff(a: &GridField, b: &GridField) -> f64 {
        a.axpy(-1.0, b).unwrap().max_abs()
    }

    #[test]
    fn paired_transforms_match_single_transforms() {
        let g = grid();
        let u = random_field(g, 1);
        let (a, b) = forward_pair(&g, u.component(0), u.component(1));
        let a1 = forward(&g, u.component(0));
        let b1 = forward(&g, u.component(1));
        for p in 0..g.len() {
            assert!((a[p] - a1[p]).norm() < 1e-12);
            assert!((b[p] - b1[p]).norm() < 1e-12);
        }
        let (x, y) = inverse_pair(&g, &a, &b);
        for p in 0..g.len() {
            assert!((x[p] - u.component(0)[p]).abs() < 1e-13);
            assert!((y[p] - u.component(1)[p]).abs() < 1e-13);
        }
    }

    #[test]
    fn parseval() {
        let u = random_field(grid(), 2);
        let phys: f64 = u.data().iter().flatten().map(|v| v * v).sum();
        assert!((u.spectral_energy() - phys).abs() <= 1e-12 * phys);
    }

    #[test]
    fn leray_annihilates_gradients_and_is_idempotent() {
        let g = grid();
        let p = random_field(g, 9);
        let waves = g.waves();
        let ph = &p.spectrum()[0];
        let grad = GridField::from_spectrum(
            g,
            (0..2)
                .map(|a| (0..g.len()).map(|k| I * waves.at(k)[a] * ph[k]).collect())
                .collect(),
        );
        assert!(grad.max_abs() > 0.1);
        assert!(grad.leray_project().unwrap().max_abs() < 1e-12);
        let u = random_field(g, 3);
        let pu = u.leray_project().unwrap();
        let ppu = pu.leray_project().unwrap();
        assert!(max_diff(&pu, &ppu) < 1e-13);
        assert!(pu.divergence().unwrap().iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn heat_evolution_basics() {
        let g = grid();
        let c = GridField::from_fn(g, 2, |_, out| out.fill(3.0));
        assert!(max_diff(&c.heat_evolve(5.0).unwrap(), &c) < 1e-14);
        let u = random_field(g, 4);
        assert_eq!(u.heat_evolve(0.0).unwrap(), u);
        assert!(u.heat_evolve(-1.0).is_err());
        let k = std::f64::consts::PI / 8.0 * 3.0;
        let mode = GridField::from_fn(g, 2, |x, out| {
            out[0] = (k * x[0]).cos();
            out[1] = 0.0;
        });
        let e = mode.heat_evolve(0.7).unwrap();
        let expect = mode.scaled((-0.7 * k * k).exp());
        assert!(max_diff(&e, &expect) < 1e-13);
        // Semigroup.
        let a = u.heat_evolve(0.3).unwrap().heat_evolve(0.4).unwrap();
        let b = u.heat_evolve(0.7).unwrap();
        assert!(max_diff(&a, &b) < 1e-14);
    }

    #[test]
    fn initial_datum_has_vanishing_moments() {
        let g = Grid::new(2, 256, 40.0).unwrap();
        for m in 0..=2 {
            let spec = DatumSpec {
                profile: DatumProfile::Gaussian { sigma: 1.0 },
                derivative_order: None,
                amplitude: 2.0,
            };
            let (u0, cert) = make_initial_datum(&g, &spec, m).unwrap();
            assert!((u0.sup_norm() - 2.0).abs() < 1e-12);
            assert!(cert.max_relative_moment < 1e-10, "m={m}: {cert:?}");
            assert!(cert.divergence_ratio < 1e-10);
        }
        // A datum built with m' = 1 keeps a nonzero second moment.
        let spec = DatumSpec {
            profile: DatumProfile::Gaussian { sigma: 1.0 },
            derivative_order: Some(1),
            amplitude: 1.0,
        };
        let (u0, _) = make_initial_datum(&g, &spec, 1).unwrap();
        assert!(max_relative_moment(&u0, 2) > 1e-3);
    }

    #[test]
    fn oversized_datum_is_rejected() {
        let spec = DatumSpec {
            profile: DatumProfile::Bump { radius: 3.0 },
            derivative_order: None,
            amplitude: 1.0,
        };
        assert!(matches!(
            make_initial_datum(&grid(), &spec, 0),
            Err(Error::SupportTooLarge(_))
        ));
    }

    #[test]
    fn weighted_norms_of_the_weight() {
        let g = Grid::new(2, 64, 16.0).unwrap();
        let m = 1;
        let a = GridField::from_fn(g, 1, |x, out| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            out[0] = (1.0 + r).powi(-4);
        });
        let rep = weighted_norms(&[(0.0, &a)], m).unwrap();
        assert!((rep.e_norm - 1.0).abs() < 1e-12);
        let z = GridField::zeros(g, 2);
        let rep = weighted_norms(&[(0.0, &z), (1.0, &z)], m).unwrap();
        assert_eq!(rep.x_norm(), 0.0);
        let b = a.scaled(-2.0);
        let r1 = weighted_norms(&[(0.5, &a)], 2).unwrap();
        let r2 = weighted_norms(&[(0.5, &b)], 2).unwrap();
        assert!((r2.e_norm - 2.0 * r1.e_norm).abs() < 1e-12 * r2.e_norm);
        assert!((r2.time_weighted - 2.0 * r1.time_weighted).abs() < 1e-12);
    }
}
