//! Uniform periodic grids on the centred box `[-L, L)ⁿ`, with cached
//! geometry, wave vectors and FFT plans.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    size: usize,
    half_width: f64,
}

type CacheKey = (usize, usize, u64);

fn key(g: &Grid) -> CacheKey {
    (g.dim, g.size, g.half_width.to_bits())
}

fn cached<T, F: FnOnce() -> T>(
    cache: &'static OnceLock<Mutex<HashMap<CacheKey, Arc<T>>>>,
    k: CacheKey,
    build: F,
) -> Arc<T> {
    let map = cache.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = map.lock().unwrap().get(&k) {
        return v.clone();
    }
    let v = Arc::new(build());
    map.lock().unwrap().entry(k).or_insert(v).clone()
}

static GEOMETRY: OnceLock<Mutex<HashMap<CacheKey, Arc<Geometry>>>> = OnceLock::new();
static WAVES: OnceLock<Mutex<HashMap<CacheKey, Arc<WaveVectors>>>> = OnceLock::new();
static FFTS: OnceLock<Mutex<HashMap<CacheKey, Arc<FftNd>>>> = OnceLock::new();

impl Grid {
    pub fn new(dim: usize, size: usize, half_width: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!("dimension {dim} not in 1..=3")));
        }
        if size < 4 || !size.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "grid size {size} must be even and at least 4"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "box half-width {half_width} must be positive"
            )));
        }
        Ok(Grid { dim, size, half_width })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.size as f64
    }

    /// Total number of points, `sizeⁿ`.
    pub fn len(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Per-axis indices of a flat (C-order) index.
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.dim).rev() {
            out[a] = flat % self.size;
            flat /= self.size;
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.size + i)
    }

    /// Flat index of the grid point closest to the origin (exactly the origin).
    pub fn origin_index(&self) -> usize {
        self.flatten(&vec![self.size / 2; self.dim])
    }

    pub fn geometry(&self) -> Arc<Geometry> {
        cached(&GEOMETRY, key(self), || Geometry::build(self))
    }

    pub fn waves(&self) -> Arc<WaveVectors> {
        cached(&WAVES, key(self), || WaveVectors::build(self))
    }

    pub fn fft(&self) -> Arc<FftNd> {
        // Plans only depend on dimension and size.
        let k = (self.dim, self.size, 0);
        cached(&FFTS, k, || FftNd::new(self.dim, self.size))
    }

    /// Signed integer frequency of index `j` in DFT order.
    pub fn signed_frequency(&self, j: usize) -> i64 {
        if j < self.size / 2 {
            j as i64
        } else {
            j as i64 - self.size as i64
        }
    }
}

/// Physical coordinates of every grid point.
#[derive(Debug)]
pub struct Geometry {
    dim: usize,
    /// `coords[p * dim + a]`
    pub coords: Vec<f64>,
    pub radius: Vec<f64>,
}

impl Geometry {
    fn build(g: &Grid) -> Self {
        let n = g.dim;
        let mut coords = vec![0.0; g.len() * n];
        let mut radius = vec![0.0; g.len()];
        let mut idx = vec![0; n];
        for p in 0..g.len() {
            g.unflatten(p, &mut idx);
            let mut r2 = 0.0;
            for a in 0..n {
                let x = g.coord(idx[a]);
                coords[p * n + a] = x;
                r2 += x * x;
            }
            radius[p] = r2.sqrt();
        }
        Geometry { dim: n, coords, radius }
    }

    pub fn point(&self, p: usize) -> &[f64] {
        &self.coords[p * self.dim..(p + 1) * self.dim]
    }
}

/// Wave vectors in DFT order.
///
/// `xi` holds the derivative wave numbers: the Nyquist component is zeroed
/// on every axis so odd multipliers keep real fields real. `k2` is the true
/// `|ξ|²` used by the heat multiplier.
#[derive(Debug)]
pub struct WaveVectors {
    dim: usize,
    pub xi: Vec<f64>,
    pub k2: Vec<f64>,
    /// Modes kept by the 2/3 rule.
    pub dealias: Vec<bool>,
    /// Flat index of the mode `-k` for each mode `k`.
    pub negated: Vec<usize>,
}

impl WaveVectors {
    fn build(g: &Grid) -> Self {
        let n = g.dim;
        let base = std::f64::consts::PI / g.half_width;
        let k1: Vec<f64> = (0..g.size).map(|j| base * g.signed_frequency(j) as f64).collect();
        let kd1: Vec<f64> = (0..g.size).map(|j| if j == g.size / 2 { 0.0 } else { k1[j] }).collect();
        let keep1: Vec<bool> = (0..g.size)
            .map(|j| (g.signed_frequency(j).unsigned_abs() as f64) < g.size as f64 / 3.0)
            .collect();
        let mut xi = vec![0.0; g.len() * n];
        let mut k2 = vec![0.0; g.len()];
        let mut dealias = vec![true; g.len()];
        let mut negated = vec![0; g.len()];
        let mut idx = vec![0; n];
        let mut neg = vec![0; n];
        for p in 0..g.len() {
            g.unflatten(p, &mut idx);
            for (q, &i) in neg.iter_mut().zip(&idx) {
                *q = (g.size - i) % g.size;
            }
            negated[p] = g.flatten(&neg);
            let mut s = 0.0;
            let mut keep = true;
            for a in 0..n {
                xi[p * n + a] = kd1[idx[a]];
                s += k1[idx[a]] * k1[idx[a]];
                keep &= keep1[idx[a]];
            }
            k2[p] = s;
            dealias[p] = keep;
        }
        WaveVectors {
            dim: n,
            xi,
            k2,
            dealias,
            negated,
        }
    }

    pub fn at(&self, p: usize) -> &[f64] {
        &self.xi[p * self.dim..(p + 1) * self.dim]
    }
}

/// In-place n-dimensional complex FFT over C-ordered data.
pub struct FftNd {
    dim: usize,
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd")
            .field("dim", &self.dim)
            .field("size", &self.size)
            .finish()
    }
}

impl FftNd {
    pub fn new(dim: usize, size: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftNd {
            dim,
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    /// Unnormalised forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Inverse transform including the `1/len` normalisation.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.size;
        let total = n.pow(self.dim as u32);
        assert_eq!(data.len(), total, "FFT buffer has the wrong length");
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // Last axis: contiguous rows.
        plan.process_with_scratch(data, &mut scratch);
        if self.dim == 1 {
            return;
        }
        let mut lines = Vec::new();
        for axis in (0..self.dim - 1).rev() {
            let inner = n.pow((self.dim - 1 - axis) as u32);
            let block = n * inner;
            lines.resize(block, Complex64::new(0.0, 0.0));
            for chunk in data.chunks_exact_mut(block) {
                // chunk is `n × inner`; lines is its `inner × n` transpose.
                transpose(chunk, &mut lines, n, inner);
                plan.process_with_scratch(&mut lines, &mut scratch);
                transpose(&lines, chunk, inner, n);
            }
        }
    }
}

/// Tiled transpose of a `rows × cols` row-major matrix.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const T: usize = 16;
    for r0 in (0..rows).step_by(T) {
        for c0 in (0..cols).step_by(T) {
            for r in r0..(r0 + T).min(rows) {
                for c in c0..(c0 + T).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
