//! Mild-form solvers for the controlled equations
//! `u(t) = e^{tΔ}u₀ - ∫₀ᵗ e^{(t-s)Δ} ℙ div R_m(u, u)(s) ds`.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{assemble_force, cancel_moments, control_indices, ForceField, MomentSignal};
use crate::error::{Error, Result};
use crate::field::{dealias_in_place, forward_many, inverse_many, GridField, Spectrum};
use crate::grid::Grid;
use crate::profiles::SampledFamily;
use crate::quadrature::gauss_legendre;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// How solver nodes are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    Uniform {
        dt: f64,
    },
    /// `dt = max(dt_min, fraction · t)`, capped at `dt_max`.
    Graded {
        dt_min: f64,
        fraction: f64,
        dt_max: f64,
    },
}

/// Times at which snapshots are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputTimes {
    Explicit {
        times: Vec<f64>,
    },
    /// `count` times geometrically spaced from `first` to the horizon.
    Geometric {
        first: f64,
        count: usize,
    },
    /// `count` equally spaced times ending at the horizon.
    Uniform {
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGridSpec {
    pub step: StepRule,
    pub outputs: OutputTimes,
}

/// Solver nodes `0 = t₀ < … < t_J = T` with output times among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub nodes: Vec<f64>,
    /// Indices into `nodes`.
    pub outputs: Vec<usize>,
}

impl TimeGrid {
    pub fn build(horizon: f64, spec: &TimeGridSpec) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
        }
        let outs: Vec<f64> = match &spec.outputs {
            OutputTimes::Explicit { times } => times.clone(),
            OutputTimes::Geometric { first, count } => {
                if !(*first > 0.0 && *first < horizon) || *count < 2 {
                    return Err(Error::InvalidInput(
                        "geometric outputs need 0 < first < T and count ≥ 2".into(),
                    ));
                }
                let q = (horizon / first).powf(1.0 / (*count - 1) as f64);
                (0..*count)
                    .map(|k| {
                        if k + 1 == *count {
                            horizon
                        } else {
                            first * q.powi(k as i32)
                        }
                    })
                    .collect()
            }
            OutputTimes::Uniform { count } => {
                if *count == 0 {
                    return Err(Error::InvalidInput("need at least one output time".into()));
                }
                (1..=*count).map(|k| horizon * k as f64 / *count as f64).collect()
            }
        };
        if outs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("output times must be strictly increasing".into()));
        }
        if outs.iter().any(|&t| !(t >= 0.0 && t <= horizon * (1.0 + 1e-12))) {
            return Err(Error::InvalidInput("output times must lie in [0, T]".into()));
        }
        let mut nodes = vec![0.0];
        let mut t = 0.0;
        while t < horizon {
            let dt = match spec.step {
                StepRule::Uniform { dt } => dt,
                StepRule::Graded {
                    dt_min,
                    fraction,
                    dt_max,
                } => (fraction * t).max(dt_min).min(dt_max),
            };
            if !(dt > 0.0) {
                return Err(Error::InvalidInput("time step must be positive".into()));
            }
            t = (t + dt).min(horizon);
            if horizon - t < 1e-9 * dt {
                t = horizon;
            }
            nodes.push(t);
        }
        let tol = 1e-9 * horizon;
        for &o in &outs {
            if !nodes.iter().any(|&s| (s - o).abs() <= tol) {
                nodes.push(o);
            }
        }
        nodes.sort_by(f64::total_cmp);
        // Drop slivers left by inserted outputs.
        let mut clean: Vec<f64> = Vec::with_capacity(nodes.len());
        for s in nodes {
            match clean.last() {
                Some(&l) if s - l <= tol => {
                    let is_out = outs.iter().any(|&o| (o - s).abs() <= tol);
                    if is_out && l != 0.0 {
                        *clean.last_mut().unwrap() = s;
                    }
                }
                _ => clean.push(s),
            }
        }
        let outputs = outs
            .iter()
            .map(|&o| {
                clean
                    .iter()
                    .position(|&s| (s - o).abs() <= tol)
                    .expect("outputs inserted")
            })
            .collect();
        Ok(TimeGrid { nodes: clean, outputs })
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn output_times(&self) -> Vec<f64> {
        self.outputs.iter().map(|&k| self.nodes[k]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardSettings {
    pub max_iterations: usize,
    /// Stop when the relative increment in the weighted norm drops below this.
    pub tolerance: f64,
    /// Consecutive increment ratios `≥ 1` that count as non-contraction.
    pub stall_window: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings {
            max_iterations: 60,
            tolerance: 1e-10,
            stall_window: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DuhamelSettings {
    pub initial_panels: usize,
    pub nodes_per_panel: usize,
    pub rel_tol: f64,
    pub max_doublings: usize,
    /// Optional smooth filter applied to the integrated spectrum.
    #[serde(default)]
    pub source_filter: Option<SourceFilter>,
}

/// Per-axis exponential filter `Π_a exp(-strength · (k_a / k_N)^order)`,
/// `k_N` the Nyquist wave number. Flat to order `order - 1` at `k = 0`, so
/// moments of lower order are untouched; it removes the grid-scale content
/// that the periodic odd symbols would otherwise spread into the far field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceFilter {
    pub order: u32,
    pub strength: f64,
}

impl SourceFilter {
    pub fn factors(&self, grid: &Grid) -> Vec<f64> {
        let half = (grid.size() / 2) as f64;
        let axis: Vec<f64> = (0..grid.size())
            .map(|j| {
                let r = grid.signed_frequency(j).unsigned_abs() as f64 / half;
                (-self.strength * r.powi(self.order as i32)).exp()
            })
            .collect();
        let mut idx = vec![0; grid.dim()];
        (0..grid.len())
            .map(|p| {
                grid.unflatten(p, &mut idx);
                idx.iter().map(|&i| axis[i]).product()
            })
            .collect()
    }
}

impl Default for DuhamelSettings {
    fn default() -> Self {
        DuhamelSettings {
            initial_panels: 4,
            nodes_per_panel: 6,
            rel_tol: 1e-8,
            max_doublings: 10,
            source_filter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimestepSettings {
    pub dt: f64,
    /// Largest admissible `dt · sup|u| / h`.
    pub cfl: f64,
    pub min_dt: f64,
}

impl Default for TimestepSettings {
    fn default() -> Self {
        TimestepSettings {
            dt: 1e-3,
            cfl: 0.5,
            min_dt: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub m: usize,
    pub horizon: f64,
    pub time_grid: TimeGridSpec,
    #[serde(default)]
    pub picard: PicardSettings,
    #[serde(default)]
    pub duhamel: DuhamelSettings,
    #[serde(default)]
    pub timestep: TimestepSettings,
    #[serde(default = "default_true")]
    pub dealias: bool,
    /// Multiplies the nonlinear term; `0` gives the heat flow.
    #[serde(default = "default_one")]
    pub nonlinear_scale: f64,
    /// Keep the solution at every node (needed by [`residual_check`]).
    #[serde(default)]
    pub retain_nodes: bool,
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Validation(format!("horizon {} must be positive", self.horizon)));
        }
        if !(self.picard.tolerance > 0.0) || self.picard.max_iterations == 0 || self.picard.stall_window == 0 {
            return Err(Error::Validation("Picard settings must be positive".into()));
        }
        if self.duhamel.initial_panels == 0 || self.duhamel.nodes_per_panel == 0 {
            return Err(Error::Validation("Duhamel settings must be positive".into()));
        }
        if !(self.timestep.dt > 0.0 && self.timestep.cfl > 0.0 && self.timestep.min_dt > 0.0) {
            return Err(Error::Validation("time-step settings must be positive".into()));
        }
        if !self.nonlinear_scale.is_finite() {
            return Err(Error::Validation("nonlinear scale must be finite".into()));
        }
        TimeGrid::build(self.horizon, &self.time_grid).map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }
}

/// `N(u, v) = s · ℙ div R_m(Du, Dv)` in spectral form, `D` the optional
/// 2/3-rule filter.
#[derive(Debug, Clone)]
pub struct NonlinearOperator<'a> {
    pub grid: Grid,
    pub m: usize,
    pub family: Option<&'a SampledFamily>,
    pub dealias: bool,
    pub scale: f64,
}

impl<'a> NonlinearOperator<'a> {
    pub fn new(grid: Grid, m: usize, family: Option<&'a SampledFamily>, dealias: bool, scale: f64) -> Result<Self> {
        if m > 0 {
            let fam = family.ok_or(Error::FamilyOrder { have: 0, need: m })?;
            if fam.order < m {
                return Err(Error::FamilyOrder {
                    have: fam.order,
                    need: m,
                });
            }
            if fam.grid != grid {
                return Err(Error::InvalidInput("profile family sampled on a different grid".into()));
            }
        }
        Ok(NonlinearOperator {
            grid,
            m,
            family,
            dealias,
            scale,
        })
    }

    fn filtered(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if !self.dealias {
            return u.to_vec();
        }
        let refs: Vec<&[f64]> = u.iter().map(|c| c.as_slice()).collect();
        let mut spec = forward_many(&self.grid, &refs);
        dealias_in_place(&self.grid, &mut spec);
        inverse_many(&self.grid, spec)
    }

    /// `(N̂(u, u), A_α)`, exploiting the symmetry of `u ⊗ u`.
    pub fn apply(&self, u: &[Vec<f64>]) -> Result<(Vec<Spectrum>, Vec<Vec<f64>>)> {
        let n = self.grid.dim();
        let du = self.filtered(u);
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let mut prod: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|&(i, j)| du[i].iter().zip(&du[j]).map(|(a, b)| a * b).collect())
            .collect();
        let moments = cancel_moments(&mut prod, self.family, &self.grid, self.m)?;
        let refs: Vec<&[f64]> = prod.iter().map(|c| c.as_slice()).collect();
        let spec = forward_many(&self.grid, &refs);
        let slot = |i: usize, j: usize| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            pairs.iter().position(|&p| p == (a, b)).unwrap()
        };
        let full: Vec<&Spectrum> = (0..n * n).map(|c| &spec[slot(c / n, c % n)]).collect();
        let nhat = self.finish(&full);
        let moments = moments
            .into_iter()
            .map(|a| (0..n * n).map(|c| a[slot(c / n, c % n)]).collect())
            .collect();
        Ok((nhat, moments))
    }

    /// `(N̂(u, v), A_α)` for a general pair.
    pub fn apply_pair(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<(Vec<Spectrum>, Vec<Vec<f64>>)> {
        let n = self.grid.dim();
        let du = self.filtered(u);
        let dv = self.filtered(v);
        let mut prod: Vec<Vec<f64>> = (0..n * n)
            .into_par_iter()
            .map(|c| du[c / n].iter().zip(&dv[c % n]).map(|(a, b)| a * b).collect())
            .collect();
        let moments = cancel_moments(&mut prod, self.family, &self.grid, self.m)?;
        let refs: Vec<&[f64]> = prod.iter().map(|c| c.as_slice()).collect();
        let spec = forward_many(&self.grid, &refs);
        let full: Vec<&Spectrum> = spec.iter().collect();
        Ok((self.finish(&full), moments))
    }

    /// `s · ℙ div` of a row-major spectral matrix field.
    fn finish(&self, r: &[&Spectrum]) -> Vec<Spectrum> {
        let n = self.grid.dim();
        let waves = self.grid.waves();
        let len = self.grid.len();
        let mut out: Vec<Spectrum> = vec![vec![ZERO; len]; n];
        let mut d = vec![ZERO; n];
        for p in 0..len {
            let xi = waves.at(p);
            for (i, di) in d.iter_mut().enumerate() {
                let mut s = ZERO;
                for j in 0..n {
                    s += xi[j] * r[j * n + i][p];
                }
                *di = I * s * self.scale;
            }
            let k2: f64 = xi.iter().map(|x| x * x).sum();
            let dot = if k2 > 0.0 {
                xi.iter().zip(&d).map(|(x, v)| x * v).sum::<Complex64>() / k2
            } else {
                ZERO
            };
            for i in 0..n {
                out[i][p] = d[i] - xi[i] * dot;
            }
        }
        out
    }
}

/// Exact exponential weights for a linearly interpolated source:
/// `(E, c₂, c₁ - c₂)` with `E = e^{-λh}`, `c₁ = (1-E)/λ`,
/// `c₂ = (1 - E(1+λh))/(λ²h)`.
fn product_weights(lambda: f64, h: f64) -> (f64, f64, f64) {
    let x = lambda * h;
    let e = (-x).exp();
    let (c1, c2) = if x < 0.05 {
        let c1 = h * (1.0 - x / 2.0 + x * x / 6.0 - x.powi(3) / 24.0 + x.powi(4) / 120.0 - x.powi(5) / 720.0);
        let c2 = h * (0.5 - x / 3.0 + x * x / 8.0 - x.powi(3) / 30.0 + x.powi(4) / 144.0 - x.powi(5) / 840.0);
        (c1, c2)
    } else {
        (-(-x).exp_m1() / lambda, (1.0 - e * (1.0 + x)) / (lambda * x))
    };
    (e, c2, c1 - c2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SolveMethod {
    Picard,
    Timestep,
}

/// Residual `u - e^{tΔ}u₀ + B̃_m(u, u)` at the output times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub times: Vec<f64>,
    /// Sup norm relative to `sup_t sup_x |u|`.
    pub sup: Vec<f64>,
    /// Weighted norm relative to the trajectory's weighted norm.
    pub weighted: Vec<f64>,
}

impl ResidualReport {
    pub fn max_weighted(&self) -> f64 {
        self.weighted.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_sup(&self) -> f64 {
        self.sup.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub method: SolveMethod,
    pub grid: Grid,
    pub m: usize,
    pub nodes: Vec<f64>,
    pub output_times: Vec<f64>,
    pub snapshots: Vec<GridField>,
    /// `sup_t |u(x, t)|` over all nodes.
    pub envelope: Vec<f64>,
    /// `(t, sup_x |u(x, t)|)` at all nodes.
    pub sup_series: Vec<(f64, f64)>,
    pub force: ForceField,
    /// Relative increments in the weighted norm.
    pub increments: Vec<f64>,
    pub absolute_increments: Vec<f64>,
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Weighted norm `max(space, time)` of the final trajectory.
    pub x_norm: f64,
    pub residual: Option<ResidualReport>,
    pub retained: Option<Vec<GridField>>,
}

impl Trajectory {
    pub fn signal(&self) -> &MomentSignal {
        &self.force.signal
    }

    /// `max_k max|div u(t_k)| / (sup|u| π/h)`
    pub fn max_divergence_ratio(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for s in &self.snapshots {
            worst = worst.max(s.divergence_ratio()?);
        }
        Ok(worst)
    }
}

/// Spatial and temporal weights of the discrete `X_{m,T}` norm.
struct Weights {
    space: Vec<f64>,
    time_exp: f64,
}

impl Weights {
    fn new(grid: &Grid, m: usize) -> Self {
        let geo = grid.geometry();
        let k = (grid.dim() + 1 + m) as i32;
        let window = grid.half_width() / 2.0;
        Weights {
            space: geo
                .radius
                .iter()
                .map(|&r| if r <= window { (1.0 + r).powi(k) } else { 0.0 })
                .collect(),
            time_exp: (grid.dim() + 1 + m) as f64 / 2.0,
        }
    }

    /// `(space-weighted sup, time-weighted sup)` of a vector field at `t`.
    fn norms(&self, u: &[Vec<f64>], t: f64) -> (f64, f64) {
        let mut sw: f64 = 0.0;
        let mut sup: f64 = 0.0;
        for p in 0..self.space.len() {
            let a = u.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt();
            sup = sup.max(a);
            sw = sw.max(self.space[p] * a);
        }
        (sw, (1.0 + t).powf(self.time_exp) * sup)
    }

    fn norms_of_difference(&self, a: &[Vec<f64>], b: &[Vec<f64>], t: f64) -> (f64, f64) {
        let mut sw: f64 = 0.0;
        let mut sup: f64 = 0.0;
        for p in 0..self.space.len() {
            let d = a.iter().zip(b).map(|(x, y)| (x[p] - y[p]).powi(2)).sum::<f64>().sqrt();
            sup = sup.max(d);
            sw = sw.max(self.space[p] * d);
        }
        (sw, (1.0 + t).powf(self.time_exp) * sup)
    }
}

/// One application of `Ψ_m` over the node set, by product integration.
/// `visit(j, new, old, moments_of_old)` sees every node; with `overwrite`
/// the trajectory is replaced by `Ψ_m(u)` as the sweep advances.
fn sweep(
    op: &NonlinearOperator,
    nodes: &[f64],
    u0hat: &[Spectrum],
    traj: &mut [Vec<Vec<f64>>],
    overwrite: bool,
    mut visit: impl FnMut(usize, &[Vec<f64>], &[Vec<f64>], Vec<Vec<f64>>),
) -> Result<()> {
    let grid = op.grid;
    let n = grid.dim();
    let waves = grid.waves();
    let (mut n_prev, mom0) = op.apply(&traj[0])?;
    let first = traj[0].clone();
    visit(0, &first, &first, mom0);
    let mut heat: Vec<Spectrum> = u0hat.to_vec();
    let mut b: Vec<Spectrum> = vec![vec![ZERO; grid.len()]; n];
    for j in 0..nodes.len() - 1 {
        let h = nodes[j + 1] - nodes[j];
        let (n_next, moms) = op.apply(&traj[j + 1])?;
        let weights: Vec<(f64, f64, f64)> = waves.k2.par_iter().map(|&k2| product_weights(k2, h)).collect();
        for a in 0..n {
            let (np, nn) = (&n_prev[a], &n_next[a]);
            b[a].par_iter_mut()
                .zip(heat[a].par_iter_mut())
                .zip(weights.par_iter())
                .enumerate()
                .for_each(|(p, ((bv, hv), &(e, w0, w1)))| {
                    *bv = e * *bv + w0 * np[p] + w1 * nn[p];
                    *hv *= e;
                });
        }
        let new_hat: Vec<Spectrum> = (0..n)
            .map(|a| heat[a].iter().zip(&b[a]).map(|(x, y)| x - y).collect())
            .collect();
        let new_u = inverse_many(&grid, new_hat);
        visit(j + 1, &new_u, &traj[j + 1], moms);
        if overwrite {
            traj[j + 1] = new_u;
        }
        n_prev = n_next;
    }
    Ok(())
}

fn check_u0(u0: &GridField) -> Result<()> {
    if u0.components() != u0.grid().dim() {
        return Err(Error::InvalidInput("initial datum must be a vector field".into()));
    }
    if u0.data().iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial datum has non-finite values".into()));
    }
    Ok(())
}

/// Collects per-node diagnostics of a final trajectory.
struct Collector {
    envelope: Vec<f64>,
    sup_series: Vec<(f64, f64)>,
    signal: MomentSignal,
    snapshots: Vec<GridField>,
    retained: Option<Vec<GridField>>,
}

impl Collector {
    fn new(grid: &Grid, m: usize, retain: bool) -> Self {
        Collector {
            envelope: vec![0.0; grid.len()],
            sup_series: Vec::new(),
            signal: MomentSignal::new(grid.dim(), m),
            snapshots: Vec::new(),
            retained: retain.then(Vec::new),
        }
    }

    fn record(&mut self, grid: &Grid, t: f64, u: &[Vec<f64>], moments: Vec<Vec<f64>>, is_output: bool) -> Result<()> {
        let mut sup: f64 = 0.0;
        for (p, e) in self.envelope.iter_mut().enumerate() {
            let a = u.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt();
            *e = e.max(a);
            sup = sup.max(a);
        }
        self.sup_series.push((t, sup));
        self.signal.push(t, moments)?;
        if is_output || self.retained.is_some() {
            let f = GridField::new(*grid, u.to_vec())?;
            if is_output {
                self.snapshots.push(f.clone());
            }
            if let Some(r) = &mut self.retained {
                r.push(f);
            }
        }
        Ok(())
    }
}

/// Picard iteration `u^{(k+1)} = Ψ_m(u^{(k)})` on the whole trajectory,
/// starting from `e^{tΔ}u₀`.
pub fn picard_solve(u0: &GridField, family: Option<&SampledFamily>, config: &SolverConfig) -> Result<Trajectory> {
    config.validate()?;
    check_u0(u0)?;
    let grid = *u0.grid();
    let tg = TimeGrid::build(config.horizon, &config.time_grid)?;
    let op = NonlinearOperator::new(grid, config.m, family, config.dealias, config.nonlinear_scale)?;
    let weights = Weights::new(&grid, config.m);
    let u0hat = u0.spectrum().to_vec();
    let nodes = &tg.nodes;

    // u^{(0)}(t_j) = e^{t_j Δ} u₀
    let mut traj: Vec<Vec<Vec<f64>>> = nodes
        .iter()
        .map(|&t| {
            let mut s = u0hat.clone();
            crate::field::heat_in_place(&grid, &mut s, t);
            inverse_many(&grid, s)
        })
        .collect();

    let mut increments = Vec::new();
    let mut absolute = Vec::new();
    let mut ratios = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.picard.max_iterations {
        iterations += 1;
        let (mut dsw, mut dtw, mut nsw, mut ntw) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut bad = false;
        sweep(&op, nodes, &u0hat, &mut traj, true, |j, new, old, _| {
            let t = nodes[j];
            let (a, b) = weights.norms_of_difference(new, old, t);
            let (c, d) = weights.norms(new, t);
            if !(a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite()) {
                bad = true;
            }
            dsw = dsw.max(a);
            dtw = dtw.max(b);
            nsw = nsw.max(c);
            ntw = ntw.max(d);
        })?;
        let abs_inc = dsw.max(dtw);
        let norm = nsw.max(ntw);
        if bad {
            ratios.push(f64::INFINITY);
            return Err(Error::NonContraction { ratios });
        }
        let rel = if norm > 0.0 { abs_inc / norm } else { abs_inc };
        if let Some(&prev) = absolute.last() {
            let r = if prev > 0.0 {
                abs_inc / prev
            } else if abs_inc > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            ratios.push(r);
        }
        absolute.push(abs_inc);
        increments.push(rel);
        log::debug!("picard iteration {iterations}: increment {rel:e}");
        let w = config.picard.stall_window;
        if ratios.len() >= w && ratios[ratios.len() - w..].iter().all(|&r| r >= 1.0) {
            return Err(Error::NonContraction { ratios });
        }
        if rel < config.picard.tolerance {
            converged = true;
            break;
        }
    }

    // Residual sweep: Ψ_m(u) - u on the converged trajectory.
    let out_set: std::collections::HashSet<usize> = tg.outputs.iter().copied().collect();
    let mut col = Collector::new(&grid, config.m, config.retain_nodes);
    let mut diffs: Vec<(f64, f64, f64)> = Vec::new();
    let (mut nsw, mut ntw, mut sup_all) = (0.0f64, 0.0f64, 0.0f64);
    let mut err = None;
    sweep(&op, nodes, &u0hat, &mut traj, false, |j, new, old, moms| {
        let t = nodes[j];
        let (a, b) = weights.norms(old, t);
        nsw = nsw.max(a);
        ntw = ntw.max(b);
        if out_set.contains(&j) {
            let (ds, dt) = weights.norms_of_difference(new, old, t);
            let dsup = dt / (1.0 + t).powf(weights.time_exp);
            diffs.push((ds.max(dt), dsup, t));
        }
        if let Err(e) = col.record(&grid, t, old, moms, out_set.contains(&j)) {
            err = Some(e);
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    for (_, s) in &col.sup_series {
        sup_all = sup_all.max(*s);
    }
    let x_norm = nsw.max(ntw);
    let residual = ResidualReport {
        times: diffs.iter().map(|d| d.2).collect(),
        weighted: diffs
            .iter()
            .map(|d| if x_norm > 0.0 { d.0 / x_norm } else { d.0 })
            .collect(),
        sup: diffs
            .iter()
            .map(|d| if sup_all > 0.0 { d.1 / sup_all } else { d.1 })
            .collect(),
    };
    let force = assemble_force(&grid, family, &col.signal)?;
    Ok(Trajectory {
        method: SolveMethod::Picard,
        grid,
        m: config.m,
        nodes: nodes.clone(),
        output_times: tg.output_times(),
        snapshots: col.snapshots,
        envelope: col.envelope,
        sup_series: col.sup_series,
        force,
        increments,
        absolute_increments: absolute,
        ratios,
        converged,
        iterations,
        x_norm,
        residual: Some(residual),
        retained: col.retained,
    })
}

/// Integrating-factor RK2 on `∂_t û = -|ξ|² û - N̂(u)`, stepping exactly
/// onto the output times. A step violating `dt · sup|u| / h ≤ cfl` is
/// rejected and halved.
pub fn timestep_solve(u0: &GridField, family: Option<&SampledFamily>, config: &SolverConfig) -> Result<Trajectory> {
    config.validate()?;
    check_u0(u0)?;
    let grid = *u0.grid();
    let n = grid.dim();
    let tg = TimeGrid::build(config.horizon, &config.time_grid)?;
    let op = NonlinearOperator::new(grid, config.m, family, config.dealias, config.nonlinear_scale)?;
    let weights = Weights::new(&grid, config.m);
    let waves = grid.waves();
    let settings = config.timestep;
    let outputs = tg.output_times();
    let mut col = Collector::new(&grid, config.m, config.retain_nodes);
    let mut nodes = vec![0.0];

    let mut uhat: Vec<Spectrum> = u0.spectrum().to_vec();
    let mut u: Vec<Vec<f64>> = u0.data().to_vec();
    let (mut nhat, moms) = op.apply(&u)?;
    let is_out = |t: f64| outputs.iter().any(|&o| (o - t).abs() <= 1e-9 * config.horizon);
    col.record(&grid, 0.0, &u, moms, is_out(0.0))?;
    let (mut nsw, mut ntw) = weights.norms(&u, 0.0);
    let mut t = 0.0;
    let mut dt = settings.dt;
    let mut next_out = outputs.iter().position(|&o| o > 1e-9 * config.horizon);
    while let Some(k) = next_out {
        let target = outputs[k];
        let sup = u
            .iter()
            .map(|c| c.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .fold(0.0, f64::max);
        let mut step = dt.min(target - t);
        while step * sup / grid.spacing() > settings.cfl {
            step *= 0.5;
            dt = step;
            if step < settings.min_dt {
                return Err(Error::StepRejected { time: t, dt: step });
            }
        }
        let landing = target - (t + step) <= 1e-9 * config.horizon;
        let step = if landing { target - t } else { step };
        let e: Vec<f64> = waves.k2.iter().map(|k2| (-k2 * step).exp()).collect();
        // Predictor a = E(û - dt N̂), corrector E(û - dt/2 N̂) - dt/2 N̂(a).
        let pred: Vec<Spectrum> = (0..n)
            .map(|c| {
                (0..grid.len())
                    .map(|p| e[p] * (uhat[c][p] - step * nhat[c][p]))
                    .collect()
            })
            .collect();
        let upred = inverse_many(&grid, pred);
        let (npred, _) = op.apply(&upred)?;
        let new_hat: Vec<Spectrum> = (0..n)
            .map(|c| {
                (0..grid.len())
                    .map(|p| e[p] * (uhat[c][p] - 0.5 * step * nhat[c][p]) - 0.5 * step * npred[c][p])
                    .collect()
            })
            .collect();
        u = inverse_many(&grid, new_hat.clone());
        uhat = new_hat;
        t = if landing { target } else { t + step };
        if u.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::StepRejected { time: t, dt: step });
        }
        let (nh, moms) = op.apply(&u)?;
        nhat = nh;
        nodes.push(t);
        let (a, b) = weights.norms(&u, t);
        nsw = nsw.max(a);
        ntw = ntw.max(b);
        col.record(&grid, t, &u, moms, landing)?;
        if landing {
            next_out = if k + 1 < outputs.len() { Some(k + 1) } else { None };
        }
    }
    let force = assemble_force(&grid, family, &col.signal)?;
    Ok(Trajectory {
        method: SolveMethod::Timestep,
        grid,
        m: config.m,
        nodes,
        output_times: outputs,
        snapshots: col.snapshots,
        envelope: col.envelope,
        sup_series: col.sup_series,
        force,
        increments: Vec::new(),
        absolute_increments: Vec::new(),
        ratios: Vec::new(),
        converged: true,
        iterations: 0,
        x_norm: nsw.max(ntw),
        residual: None,
        retained: col.retained,
    })
}

/// Residual of the integral equation on a trajectory that retained its
/// nodes, with `B̃_m` by product integration over those nodes.
pub fn residual_check(
    traj: &Trajectory,
    u0: &GridField,
    family: Option<&SampledFamily>,
    config: &SolverConfig,
) -> Result<ResidualReport> {
    let Some(retained) = &traj.retained else {
        return Err(Error::InvalidInput("trajectory did not retain its nodes".into()));
    };
    let grid = traj.grid;
    let op = NonlinearOperator::new(grid, traj.m, family, config.dealias, config.nonlinear_scale)?;
    let weights = Weights::new(&grid, traj.m);
    let mut data: Vec<Vec<Vec<f64>>> = retained.iter().map(|f| f.data().to_vec()).collect();
    let outputs: Vec<usize> = traj
        .output_times
        .iter()
        .map(|&o| {
            traj.nodes
                .iter()
                .position(|&s| (s - o).abs() <= 1e-9 * config.horizon)
                .unwrap()
        })
        .collect();
    let x_norm = traj.x_norm;
    let sup_all = traj.sup_series.iter().map(|s| s.1).fold(0.0, f64::max);
    let mut rep = ResidualReport {
        times: Vec::new(),
        sup: Vec::new(),
        weighted: Vec::new(),
    };
    sweep(&op, &traj.nodes, u0.spectrum(), &mut data, false, |j, new, old, _| {
        if outputs.contains(&j) {
            let t = traj.nodes[j];
            let (ds, dt) = weights.norms_of_difference(new, old, t);
            let dsup = dt / (1.0 + t).powf(weights.time_exp);
            rep.times.push(t);
            rep.weighted
                .push(if x_norm > 0.0 { ds.max(dt) / x_norm } else { ds.max(dt) });
            rep.sup.push(if sup_all > 0.0 { dsup / sup_all } else { dsup });
        }
    })?;
    Ok(rep)
}

/// A pair of time-dependent vector fields `(u(s), v(s))`.
pub trait FieldSource: Sync {
    fn pair_at(&self, s: f64) -> Result<(GridField, GridField)>;
    /// `true` when the pair does not depend on `s`.
    fn is_stationary(&self) -> bool {
        false
    }
}

/// A time-independent pair.
pub struct StationaryPair {
    pub u: GridField,
    pub v: GridField,
}

impl FieldSource for StationaryPair {
    fn pair_at(&self, _s: f64) -> Result<(GridField, GridField)> {
        Ok((self.u.clone(), self.v.clone()))
    }

    fn is_stationary(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuhamelReport {
    pub panels: usize,
    pub nodes: usize,
    pub doublings: usize,
    pub last_change: f64,
}

/// `B̃_m(u, v)(t) = ∫₀ᵗ e^{(t-s)Δ} ℙ div R_m(u, v)(s) ds` by the substitution
/// `s = t - τ²` with Gauss–Legendre panels on `τ ∈ [0, √t]`, doubling the
/// panel count until the sup norm changes by less than `rel_tol`.
pub fn duhamel_bilinear(
    source: &dyn FieldSource,
    family: Option<&SampledFamily>,
    m: usize,
    t: f64,
    dealias: bool,
    settings: &DuhamelSettings,
) -> Result<(GridField, DuhamelReport)> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("output time {t} must be nonnegative")));
    }
    let (u_probe, _) = source.pair_at(t)?;
    let grid = *u_probe.grid();
    let n = grid.dim();
    if t == 0.0 {
        return Ok((
            GridField::zeros(grid, n),
            DuhamelReport {
                panels: 0,
                nodes: 0,
                doublings: 0,
                last_change: 0.0,
            },
        ));
    }
    let op = NonlinearOperator::new(grid, m, family, dealias, 1.0)?;
    let waves = grid.waves();
    let stationary = if source.is_stationary() {
        let (u, v) = source.pair_at(0.0)?;
        Some(op.apply_pair(u.data(), v.data())?.0)
    } else {
        None
    };
    let (gx, gw) = gauss_legendre(settings.nodes_per_panel);
    let root = t.sqrt();
    let integrate = |panels: usize| -> Result<Vec<Spectrum>> {
        let width = root / panels as f64;
        let taus: Vec<(f64, f64)> = (0..panels)
            .flat_map(|k| {
                let a = k as f64 * width;
                gx.iter()
                    .zip(&gw)
                    .map(move |(x, w)| (a + 0.5 * width * (1.0 + x), 0.5 * width * w))
            })
            .collect();
        if let Some(nhat) = &stationary {
            // Σ_q w_q 2τ_q e^{-τ_q²|ξ|²} per mode.
            let factor: Vec<f64> = waves
                .k2
                .par_iter()
                .map(|k2| {
                    taus.iter()
                        .map(|(tau, w)| 2.0 * tau * w * (-tau * tau * k2).exp())
                        .sum()
                })
                .collect();
            return Ok(nhat
                .iter()
                .map(|c| c.iter().zip(&factor).map(|(v, f)| v * f).collect())
                .collect());
        }
        let parts: Vec<Vec<Spectrum>> = taus
            .par_iter()
            .map(|&(tau, w)| {
                let (u, v) = source.pair_at(t - tau * tau)?;
                let (mut nhat, _) = op.apply_pair(u.data(), v.data())?;
                for c in nhat.iter_mut() {
                    for (x, k2) in c.iter_mut().zip(&waves.k2) {
                        *x *= 2.0 * tau * w * (-tau * tau * k2).exp();
                    }
                }
                Ok(nhat)
            })
            .collect::<Result<_>>()?;
        let mut acc = vec![vec![ZERO; grid.len()]; n];
        for part in parts {
            for (a, c) in acc.iter_mut().zip(part) {
                for (x, y) in a.iter_mut().zip(c) {
                    *x += y;
                }
            }
        }
        Ok(acc)
    };
    let filter = settings.source_filter.map(|f| f.factors(&grid));
    let integrate = |panels: usize| -> Result<Vec<Spectrum>> {
        let mut acc = integrate(panels)?;
        if let Some(f) = &filter {
            for c in acc.iter_mut() {
                for (x, w) in c.iter_mut().zip(f) {
                    *x *= w;
                }
            }
        }
        Ok(acc)
    };
    let sup = |s: &[Spectrum]| -> f64 { GridField::from_spectrum(grid, s.to_vec()).sup_norm() };
    let mut panels = settings.initial_panels;
    let mut prev = integrate(panels)?;
    let mut change = f64::INFINITY;
    for d in 1..=settings.max_doublings {
        panels *= 2;
        let next = integrate(panels)?;
        let diff: Vec<Spectrum> = next
            .iter()
            .zip(&prev)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let scale = sup(&next);
        change = if scale > 0.0 { sup(&diff) / scale } else { 0.0 };
        prev = next;
        if change < settings.rel_tol {
            return Ok((
                GridField::from_spectrum(grid, prev),
                DuhamelReport {
                    panels,
                    nodes: panels * settings.nodes_per_panel,
                    doublings: d,
                    last_change: change,
                },
            ));
        }
    }
    Err(Error::DuhamelUnderResolved {
        doublings: settings.max_doublings,
        change,
    })
}

/// Result of an amplitude bisection for the contraction regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// Largest amplitude seen to contract.
    pub contracting: f64,
    /// Smallest amplitude seen to fail.
    pub failing: f64,
    pub evaluations: Vec<(f64, bool)>,
}

impl ThresholdReport {
    pub fn estimate(&self) -> f64 {
        0.5 * (self.contracting + self.failing)
    }
}

/// Bisect on the amplitude `A` of `A · unit` for the onset of
/// non-contraction of the Picard iteration.
pub fn contraction_threshold(
    unit: &GridField,
    family: Option<&SampledFamily>,
    config: &SolverConfig,
    start: f64,
    bisections: usize,
) -> Result<ThresholdReport> {
    let mut evals = Vec::new();
    let mut contracts = |a: f64| -> Result<bool> {
        let ok = match picard_solve(&unit.scaled(a), family, config) {
            Ok(tr) => tr.converged && tr.ratios.iter().all(|&r| r < 1.0),
            Err(Error::NonContraction { .. }) => false,
            Err(e) => return Err(e),
        };
        evals.push((a, ok));
        Ok(ok)
    };
    let (mut lo, mut hi);
    if contracts(start)? {
        lo = start;
        hi = 2.0 * start;
        while contracts(hi)? {
            lo = hi;
            hi *= 2.0;
            if hi > 1e8 {
                return Err(Error::Tolerance("no non-contracting amplitude found".into()));
            }
        }
    } else {
        hi = start;
        lo = 0.5 * start;
        while !contracts(lo)? {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-12 {
                return Err(Error::Tolerance("no contracting amplitude found".into()));
            }
        }
    }
    for _ in 0..bisections {
        let mid = 0.5 * (lo + hi);
        if contracts(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ThresholdReport {
        contracting: lo,
        failing: hi,
        evaluations: evals,
    })
}

/// Shorthand used by tests and the harness: signal indices for order `m`.
pub fn signal_indices(n: usize, m: usize) -> usize {
    control_indices(n, m).len()
}
