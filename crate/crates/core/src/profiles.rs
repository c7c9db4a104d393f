//! Compactly supported control profiles with prescribed moments.
//!
//! A normalised bump `ψ` on `[a, b]` is corrected by a polynomial `P` of
//! degree `m` so that `φ = Pψ` has moments `(1, 0, …, 0)` up to order `m`.
//! Tensorising the per-axis `φ_i` gives `χ`, and the scaled derivatives
//! `χ_α = (-1)^{|α|}/α! ∂^α χ` are biorthogonal to the monomials:
//! `∫ x^β χ_α = δ_{αβ}` for `|β| ≤ m`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::jet;
use crate::multi_index::{indices_up_to, MultiIndex};
use crate::quadrature::{integrate_adaptive, AdaptiveOptions};

/// Condition number above which the moment system is flagged.
pub const CONDITION_WARNING: f64 = 1e12;

/// Shape of the unnormalised bump in the affine coordinate `τ ∈ (-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BumpShape {
    /// `exp(-1/(1-τ²))`
    #[default]
    Exponential,
    /// `exp(-s/(1-τ²))`
    Sharpened { sharpness: f64 },
}

impl BumpShape {
    fn sharpness(&self) -> f64 {
        match self {
            BumpShape::Exponential => 1.0,
            BumpShape::Sharpened { sharpness } => *sharpness,
        }
    }

    /// Taylor jet of length `len` of the unnormalised bump at `τ`.
    fn jet(&self, tau: f64, len: usize) -> Vec<f64> {
        if tau.abs() >= 1.0 {
            return vec![0.0; len];
        }
        let mut w = vec![0.0; len];
        w[0] = 1.0 - tau * tau;
        if len > 1 {
            w[1] = -2.0 * tau;
        }
        if len > 2 {
            w[2] = -1.0;
        }
        let s = self.sharpness();
        let mut q = jet::recip(&w);
        for c in q.iter_mut() {
            *c *= -s;
        }
        if q[0] < -740.0 {
            return vec![0.0; len];
        }
        jet::exp(&q)
    }
}

/// A nonnegative smooth bump on `[a, b]` normalised to unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    a: f64,
    b: f64,
    shape: BumpShape,
    /// `∫_{-1}^{1}` of the unnormalised shape.
    reference_mass: f64,
}

impl BumpSpec {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        Self::with_shape(a, b, BumpShape::default())
    }

    pub fn with_shape(a: f64, b: f64, shape: BumpShape) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidInput(format!(
                "bump interval [{a}, {b}] must satisfy a < b"
            )));
        }
        if let BumpShape::Sharpened { sharpness } = shape {
            if !(sharpness > 0.0 && sharpness.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "bump sharpness {sharpness} must be positive"
                )));
            }
        }
        let mass = integrate_adaptive(
            |t| shape.jet(t, 1)[0],
            -1.0,
            1.0,
            AdaptiveOptions {
                abs_tol: 1e-15,
                rel_tol: 1e-15,
                max_intervals: 4000,
            },
        )?
        .value;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bump shape {shape:?} has no resolvable mass"
            )));
        }
        Ok(BumpSpec {
            a,
            b,
            shape,
            reference_mass: mass,
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn shape(&self) -> BumpShape {
        self.shape
    }

    fn tau(&self, s: f64) -> f64 {
        (2.0 * s - self.a - self.b) / (self.b - self.a)
    }

    fn scale(&self) -> f64 {
        2.0 / ((self.b - self.a) * self.reference_mass)
    }

    pub fn value(&self, s: f64) -> f64 {
        self.shape.jet(self.tau(s), 1)[0] * self.scale()
    }

    /// Taylor coefficients `ψ^{(k)}(s)/k!`, `k < len`.
    pub fn jet(&self, s: f64, len: usize) -> Vec<f64> {
        let mut j = self.shape.jet(self.tau(s), len);
        jet::rescale(&mut j, 2.0 / (self.b - self.a));
        let c = self.scale();
        for v in j.iter_mut() {
            *v *= c;
        }
        j
    }
}

/// Moments `μ_ℓ = ∫ s^ℓ ψ(s) ds`, `ℓ = 0..=ℓ_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub values: Vec<f64>,
    /// Quadrature error estimates per moment.
    pub errors: Vec<f64>,
}

impl MomentVector {
    pub fn max_order(&self) -> usize {
        self.values.len() - 1
    }
}

pub fn compute_moments(bump: &BumpSpec, max_order: usize) -> Result<MomentVector> {
    compute_moments_with(bump, max_order, AdaptiveOptions::default())
}

pub fn compute_moments_with(bump: &BumpSpec, max_order: usize, opts: AdaptiveOptions) -> Result<MomentVector> {
    let (a, b) = bump.interval();
    let results: Vec<_> = (0..=max_order)
        .map(|l| integrate_adaptive(|s| s.powi(l as i32) * bump.value(s), a, b, opts))
        .collect::<Result<_>>()?;
    Ok(MomentVector {
        values: results.iter().map(|r| r.value).collect(),
        errors: results.iter().map(|r| r.error).collect(),
    })
}

/// Hankel matrix `M_{ij} = μ_{i+j}`, `0 ≤ i, j ≤ m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    pub order: usize,
    pub entries: DMatrix<f64>,
}

impl MomentMatrix {
    pub fn from_moments(moments: &MomentVector, order: usize) -> Result<Self> {
        if moments.max_order() < 2 * order {
            return Err(Error::InvalidInput(format!(
                "need moments up to {} for an order-{order} matrix, have {}",
                2 * order,
                moments.max_order()
            )));
        }
        let entries = DMatrix::from_fn(order + 1, order + 1, |i, j| moments.values[i + j]);
        Ok(MomentMatrix { order, entries })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .entries
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Spectral condition number (ratio of extreme eigenvalues).
    pub fn condition_number(&self) -> f64 {
        let ev = self.eigenvalues();
        let lo = ev[0];
        let hi = ev[ev.len() - 1];
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

/// Coefficients `a` of `P(s) = Σ a_j s^j` with `M a = e₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSolution {
    pub coeffs: Vec<f64>,
    /// `‖M a - e₀‖_∞`
    pub residual: f64,
    pub condition_number: f64,
}

pub fn solve_moment_system(matrix: &MomentMatrix) -> Result<MomentSolution> {
    let m = &matrix.entries;
    let n = m.nrows();
    let symmetric = (0..n).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]));
    if !symmetric {
        return Err(Error::InvalidInput("moment matrix is not symmetric".into()));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { order: matrix.order })?;
    let mut rhs = DVector::zeros(n);
    rhs[0] = 1.0;
    let mut a = chol.solve(&rhs);
    // One step of iterative refinement.
    let r = &rhs - m * &a;
    a += chol.solve(&r);
    let residual = (&rhs - m * &a).amax();
    let condition_number = matrix.condition_number();
    if condition_number > CONDITION_WARNING {
        log::warn!(
            "moment matrix of order {} is ill-conditioned (cond = {condition_number:e})",
            matrix.order
        );
    }
    Ok(MomentSolution {
        coeffs: a.iter().copied().collect(),
        residual,
        condition_number,
    })
}

/// `φ(s) = P(s) ψ(s)` with `∫ s^k φ = δ_{k0}` for `k ≤ m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile1D {
    pub bump: BumpSpec,
    pub coeffs: Vec<f64>,
    /// `∫ s^k φ - δ_{k0}` for `k = 0..=m`, by direct quadrature of `φ`.
    pub moment_residuals: Vec<f64>,
    pub condition_number: f64,
}

impl Profile1D {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn value(&self, s: f64) -> f64 {
        let p = self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c);
        p * self.bump.value(s)
    }

    /// Taylor coefficients `φ^{(k)}(s)/k!`, `k < len`.
    pub fn jet(&self, s: f64, len: usize) -> Vec<f64> {
        let psi = self.bump.jet(s, len);
        if psi.iter().all(|&v| v == 0.0) {
            return psi;
        }
        let p = jet::polynomial(&self.coeffs, s, len);
        jet::mul(&p, &psi)
    }

    pub fn max_residual(&self) -> f64 {
        self.moment_residuals.iter().fold(0.0, |acc: f64, r| acc.max(r.abs()))
    }
}

pub fn build_profile(bump: &BumpSpec, order: usize) -> Result<Profile1D> {
    let moments = compute_moments(bump, 2 * order)?;
    let matrix = MomentMatrix::from_moments(&moments, order)?;
    let sol = solve_moment_system(&matrix)?;
    let mut profile = Profile1D {
        bump: bump.clone(),
        coeffs: sol.coeffs,
        moment_residuals: Vec::new(),
        condition_number: sol.condition_number,
    };
    let (a, b) = bump.interval();
    profile.moment_residuals = (0..=order)
        .map(|k| {
            let r = integrate_adaptive(
                |s| s.powi(k as i32) * profile.value(s),
                a,
                b,
                AdaptiveOptions::default(),
            )?;
            Ok(r.value - if k == 0 { 1.0 } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(profile)
}

/// Matrix `B_{αβ} = ∫ x^β χ_α dx` over `|α|, |β| ≤ m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiorthogonalityCertificate {
    pub indices: Vec<MultiIndex>,
    /// Row `α`, column `β`.
    pub matrix: Vec<Vec<f64>>,
    pub max_error: f64,
}

/// The family `χ_α`, `|α| ≤ m`, on the box `K = ∏ [a_i, b_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProfileFamily {
    pub dim: usize,
    pub order: usize,
    pub profiles: Vec<Profile1D>,
    pub certificate: BiorthogonalityCertificate,
}

pub fn build_chi_family(boxes: &[(f64, f64)], order: usize) -> Result<ControlProfileFamily> {
    build_chi_family_with_shape(boxes, order, BumpShape::default())
}

pub fn build_chi_family_with_shape(
    boxes: &[(f64, f64)],
    order: usize,
    shape: BumpShape,
) -> Result<ControlProfileFamily> {
    if boxes.is_empty() {
        return Err(Error::InvalidInput("control box needs at least one axis".into()));
    }
    let profiles: Vec<Profile1D> = boxes
        .par_iter()
        .map(|&(a, b)| build_profile(&BumpSpec::with_shape(a, b, shape)?, order))
        .collect::<Result<_>>()?;
    let mut family = ControlProfileFamily {
        dim: boxes.len(),
        order,
        profiles,
        certificate: BiorthogonalityCertificate {
            indices: Vec::new(),
            matrix: Vec::new(),
            max_error: 0.0,
        },
    };
    family.certificate = family.biorthogonality(order)?;
    Ok(family)
}

impl ControlProfileFamily {
    pub fn indices(&self) -> Vec<MultiIndex> {
        indices_up_to(self.dim, self.order)
    }

    pub fn boxes(&self) -> Vec<(f64, f64)> {
        self.profiles.iter().map(|p| p.bump.interval()).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.profiles.iter().zip(x).all(|(p, &xi)| {
            let (a, b) = p.bump.interval();
            xi > a && xi < b
        })
    }

    /// `χ(x) = ∏ φ_i(x_i)`
    pub fn chi(&self, x: &[f64]) -> f64 {
        self.profiles.iter().zip(x).map(|(p, &xi)| p.value(xi)).product()
    }

    /// `χ_α(x) = (-1)^{|α|}/α! ∂^α χ(x)`
    pub fn chi_alpha(&self, alpha: &MultiIndex, x: &[f64]) -> f64 {
        self.profiles
            .iter()
            .zip(x)
            .zip(&alpha.0)
            .map(|((p, &xi), &a)| {
                let j = p.jet(xi, a + 1);
                if a % 2 == 1 {
                    -j[a]
                } else {
                    j[a]
                }
            })
            .product()
    }

    /// `∫ x^b (-1)^a φ_i^{(a)}/a! dx` along one axis.
    fn axis_integral(&self, axis: usize, b: usize, a: usize) -> Result<f64> {
        let p = &self.profiles[axis];
        let (lo, hi) = p.bump.interval();
        let sign = if a % 2 == 1 { -1.0 } else { 1.0 };
        let r = integrate_adaptive(
            |s| sign * s.powi(b as i32) * p.jet(s, a + 1)[a],
            lo,
            hi,
            AdaptiveOptions {
                abs_tol: 1e-13,
                rel_tol: 0.0,
                max_intervals: 4000,
            },
        )?;
        Ok(r.value)
    }

    /// `B_{αβ} = ∫ x^β χ_α` for `|α|, |β| ≤ up_to`, by tensor quadrature.
    pub fn biorthogonality(&self, up_to: usize) -> Result<BiorthogonalityCertificate> {
        let pairs: Vec<(usize, usize, usize)> = (0..self.dim)
            .flat_map(|ax| (0..=up_to).flat_map(move |b| (0..=up_to).map(move |a| (ax, b, a))))
            .collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(ax, b, a)| self.axis_integral(ax, b, a))
            .collect::<Result<_>>()?;
        let table = |ax: usize, b: usize, a: usize| values[(ax * (up_to + 1) + b) * (up_to + 1) + a];
        let indices = indices_up_to(self.dim, up_to);
        let mut max_error: f64 = 0.0;
        let matrix: Vec<Vec<f64>> = indices
            .iter()
            .map(|alpha| {
                indices
                    .iter()
                    .map(|beta| {
                        let v: f64 = (0..self.dim).map(|ax| table(ax, beta.0[ax], alpha.0[ax])).product();
                        let target = if alpha == beta { 1.0 } else { 0.0 };
                        max_error = max_error.max((v - target).abs());
                        v
                    })
                    .collect()
            })
            .collect();
        Ok(BiorthogonalityCertificate {
            indices,
            matrix,
            max_error,
        })
    }

    /// Sample every `χ_α` on `grid` and biorthogonalise the samples against
    /// the discrete (trapezoid) moments of the grid.
    pub fn sample(&self, grid: &Grid) -> Result<SampledFamily> {
        SampledFamily::new(self, grid)
    }
}

/// Grid samples of a profile family.
///
/// The raw samples only satisfy the moment relations up to the trapezoid
/// error of the grid. The stored samples are the discrete dual basis
/// `χ̃_α = Σ_γ χ_γ (G⁻¹)_{γα}`, `G_{βγ} = h^n Σ x^β χ_γ(x)`, so that
/// `h^n Σ x^β χ̃_α = δ_{αβ}` holds to rounding. `raw_defect = max |G - I|`.
#[derive(Debug, Clone)]
pub struct SampledFamily {
    pub grid: Grid,
    pub order: usize,
    pub indices: Vec<MultiIndex>,
    /// Flat indices of the grid points strictly inside `K`.
    pub support: Vec<usize>,
    /// `samples[k][s]` is `χ̃_{indices[k]}` at `support[s]`.
    pub samples: Vec<Vec<f64>>,
    pub raw_defect: f64,
}

impl SampledFamily {
    fn new(family: &ControlProfileFamily, grid: &Grid) -> Result<Self> {
        if grid.dim() != family.dim {
            return Err(Error::InvalidInput(format!(
                "family dimension {} does not match grid dimension {}",
                family.dim,
                grid.dim()
            )));
        }
        let l = grid.half_width();
        for (a, b) in family.boxes() {
            if a <= -l || b >= l - grid.spacing() {
                return Err(Error::InvalidInput(format!(
                    "control box [{a}, {b}] does not fit in the grid box [-{l}, {l})"
                )));
            }
        }
        let n = grid.dim();
        let order = family.order;
        let len = order + 1;
        // Per-axis jets at every grid coordinate.
        let axis_jets: Vec<Vec<Vec<f64>>> = family
            .profiles
            .iter()
            .map(|p| {
                (0..grid.size())
                    .map(|i| {
                        let x = grid.coord(i);
                        let mut j = p.jet(x, len);
                        for (k, v) in j.iter_mut().enumerate() {
                            if k % 2 == 1 {
                                *v = -*v;
                            }
                        }
                        j
                    })
                    .collect()
            })
            .collect();
        let geo = grid.geometry();
        let mut idx = vec![0; n];
        let support: Vec<usize> = (0..grid.len()).filter(|&p| family.contains(geo.point(p))).collect();
        let indices = family.indices();
        let raw: Vec<Vec<f64>> = indices
            .iter()
            .map(|alpha| {
                support
                    .iter()
                    .map(|&p| {
                        grid.unflatten(p, &mut idx);
                        (0..n).map(|ax| axis_jets[ax][idx[ax]][alpha.0[ax]]).product()
                    })
                    .collect()
            })
            .collect();
        let dv = grid.cell_volume();
        let k = indices.len();
        let gram = DMatrix::from_fn(k, k, |bi, gi| {
            let beta = &indices[bi];
            support
                .iter()
                .zip(&raw[gi])
                .map(|(&p, &c)| beta.monomial(geo.point(p)) * c)
                .sum::<f64>()
                * dv
        });
        let raw_defect = (&gram - DMatrix::<f64>::identity(k, k)).amax();
        let inv = gram.clone().try_inverse().ok_or_else(|| {
            Error::InvalidInput(format!(
                "control box is under-resolved by the grid (spacing {})",
                grid.spacing()
            ))
        })?;
        let samples: Vec<Vec<f64>> = (0..k)
            .map(|ai| {
                let mut out = vec![0.0; support.len()];
                for (gi, row) in raw.iter().enumerate() {
                    let c = inv[(gi, ai)];
                    if c != 0.0 {
                        for (o, v) in out.iter_mut().zip(row) {
                            *o += c * v;
                        }
                    }
                }
                out
            })
            .collect();
        Ok(SampledFamily {
            grid: *grid,
            order,
            indices,
            support,
            samples,
            raw_defect,
        })
    }

    /// Position of `alpha` in `indices`.
    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|a| a == alpha)
    }

    /// Full-grid array of one sampled profile.
    pub fn dense(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (&p, &v) in self.support.iter().zip(&self.samples[k]) {
            out[p] = v;
        }
        out
    }

    /// Discrete moments `h^n Σ x^β χ̃_α` as a matrix (row `α`, column `β`).
    pub fn discrete_moments(&self) -> Vec<Vec<f64>> {
        let geo = self.grid.geometry();
        let dv = self.grid.cell_volume();
        self.samples
            .iter()
            .map(|s| {
                self.indices
                    .iter()
                    .map(|beta| {
                        self.support
                            .iter()
                            .zip(s)
                            .map(|(&p, &c)| beta.monomial(geo.point(p)) * c)
                            .sum::<f64>()
                            * dv
                    })
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::composite_gauss;

    fn oracle_integral(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let (x, w) = composite_gauss(a, b, 400, 12);
        x.iter().zip(&w).map(|(x, w)| w * f(*x)).sum()
    }

    #[test]
    fn degenerate_interval_is_rejected() {
        assert!(BumpSpec::new(1.0, 1.0).is_err());
        assert!(BumpSpec::new(2.0, 1.0).is_err());
    }

    #[test]
    fn bump_is_normalised_nonnegative_and_supported() {
        let bump = BumpSpec::new(-0.5, 2.0).unwrap();
        let mass = oracle_integral(|s| bump.value(s), -0.5, 2.0);
        assert!((mass - 1.0).abs() < 1e-12);
        for i in 0..=200 {
            let s = -1.0 + 4.0 * i as f64 / 200.0;
            let v = bump.value(s);
            assert!(v >= 0.0);
            if !(-0.5..=2.0).contains(&s) {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn bump_jet_matches_finite_differences() {
        let bump = BumpSpec::new(-1.0, 1.0).unwrap();
        let s = 0.3;
        let h = 1e-4;
        let j = bump.jet(s, 3);
        let d1 = (bump.value(s + h) - bump.value(s - h)) / (2.0 * h);
        let d2 = (bump.value(s + h) - 2.0 * bump.value(s) + bump.value(s - h)) / (h * h);
        assert!((j[1] - d1).abs() < 1e-7 * d1.abs().max(1.0));
        assert!((2.0 * j[2] - d2).abs() < 1e-5 * d2.abs().max(1.0));
    }

    #[test]
    fn symmetric_moments() {
        let bump = BumpSpec::new(-1.0, 1.0).unwrap();
        let mv = compute_moments(&bump, 4).unwrap();
        assert!((mv.values[0] - 1.0).abs() < 1e-12);
        assert!(mv.values[1].abs() < 1e-12);
        assert!(mv.values[3].abs() < 1e-12);
        // Independent oracle: composite Gauss rule at high resolution.
        let mu2 = oracle_integral(|s| s * s * bump.value(s), -1.0, 1.0);
        assert!((mv.values[2] - mu2).abs() < 1e-12);
        for (l, v) in mv.values.iter().enumerate() {
            assert!(v.abs() <= 1.0f64.powi(l as i32) + 1e-12);
        }
    }

    #[test]
    fn moment_bound_on_asymmetric_interval() {
        let bump = BumpSpec::new(-0.5, 2.0).unwrap();
        let mv = compute_moments(&bump, 8).unwrap();
        for (l, v) in mv.values.iter().enumerate() {
            assert!(v.abs() <= 2.0f64.powi(l as i32) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pathological_quadrature_is_reported() {
        let bump = BumpSpec::with_shape(0.0, 1.0, BumpShape::Sharpened { sharpness: 40.0 }).unwrap();
        let opts = AdaptiveOptions {
            abs_tol: 1e-30,
            rel_tol: 0.0,
            max_intervals: 2,
        };
        assert!(matches!(
            compute_moments_with(&bump, 2, opts),
            Err(Error::QuadratureNonConvergence { .. })
        ));
    }

    #[test]
    fn trivial_moment_systems() {
        let mv = MomentVector {
            values: vec![1.0],
            errors: vec![0.0],
        };
        let sol = solve_moment_system(&MomentMatrix::from_moments(&mv, 0).unwrap()).unwrap();
        assert_eq!(sol.coeffs, vec![1.0]);

        let bump = BumpSpec::new(-1.0, 1.0).unwrap();
        let mv = compute_moments(&bump, 2).unwrap();
        let sol = solve_moment_system(&MomentMatrix::from_moments(&mv, 1).unwrap()).unwrap();
        assert!((sol.coeffs[0] - 1.0).abs() < 1e-12);
        assert!(sol.coeffs[1].abs() < 1e-12);
    }

    #[test]
    fn order_two_symmetric_matches_explicit_inverse() {
        let bump = BumpSpec::new(-1.0, 1.0).unwrap();
        // Oracle moments from the fixed Gauss rule, explicit 3x3 inverse.
        let mu: Vec<f64> = (0..=4)
            .map(|l| oracle_integral(|s| s.powi(l) * bump.value(s), -1.0, 1.0))
            .collect();
        let m = [[mu[0], mu[1], mu[2]], [mu[1], mu[2], mu[3]], [mu[2], mu[3], mu[4]]];
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        // First column of the inverse = cofactors of the first row / det.
        let a0 = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
        let a1 = -(m[1][0] * m[2][2] - m[1][2] * m[2][0]) / det;
        let a2 = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;

        let mv = compute_moments(&bump, 4).unwrap();
        let sol = solve_moment_system(&MomentMatrix::from_moments(&mv, 2).unwrap()).unwrap();
        assert!((sol.coeffs[0] - a0).abs() < 1e-9);
        assert!((sol.coeffs[1] - a1).abs() < 1e-9);
        assert!((sol.coeffs[2] - a2).abs() < 1e-9);
        // Closed form for a symmetric bump.
        let d = mu[4] - mu[2] * mu[2];
        assert!((a0 - mu[4] / d).abs() < 1e-9);
        assert!((a2 + mu[2] / d).abs() < 1e-9);
    }

    #[test]
    fn negative_moments_are_not_positive_definite() {
        let mv = MomentVector {
            values: vec![1.0, 0.0, -0.5],
            errors: vec![0.0; 3],
        };
        let mm = MomentMatrix::from_moments(&mv, 1).unwrap();
        assert!(matches!(
            solve_moment_system(&mm),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn profile_order_zero_and_one_are_the_bump() {
        let bump = BumpSpec::new(-1.0, 1.0).unwrap();
        for m in 0..=1 {
            let p = build_profile(&bump, m).unwrap();
            for s in [-0.7, 0.0, 0.4] {
                assert!((p.value(s) - bump.value(s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn asymmetric_order_three_profile_certificate() {
        let bump = BumpSpec::new(0.0, 1.0).unwrap();
        let p = build_profile(&bump, 3).unwrap();
        assert!(p.max_residual() <= 1e-10, "{:?}", p.moment_residuals);
        for k in 0..=3 {
            let v = oracle_integral(|s| s.powi(k) * p.value(s), 0.0, 1.0);
            let target = if k == 0 { 1.0 } else { 0.0 };
            assert!((v - target).abs() <= 1e-10, "k={k}: {v}");
        }
    }

    #[test]
    fn small_family_moments_by_tensor_quadrature() {
        let fam = build_chi_family(&[(-1.0, 1.0), (-1.0, 1.0)], 1).unwrap();
        let e1 = MultiIndex(vec![1, 0]);
        // 2D tensor Gauss oracle.
        let (x, w) = composite_gauss(-1.0, 1.0, 60, 10);
        let mut m_x1 = 0.0;
        let mut m_x2 = 0.0;
        let mut m_0 = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            for (yj, wj) in x.iter().zip(&w) {
                let c = fam.chi_alpha(&e1, &[*xi, *yj]);
                m_0 += wi * wj * c;
                m_x1 += wi * wj * xi * c;
                m_x2 += wi * wj * yj * c;
            }
        }
        assert!((m_x1 - 1.0).abs() < 1e-10);
        assert!(m_x2.abs() < 1e-10);
        assert!(m_0.abs() < 1e-10);
        let chi0 = fam.chi_alpha(&MultiIndex::zero(2), &[0.2, -0.3]);
        assert!((chi0 - fam.chi(&[0.2, -0.3])).abs() < 1e-14);
    }

    #[test]
    fn sampled_family_is_discretely_biorthogonal_and_supported() {
        let fam = build_chi_family(&[(-1.5, 1.0), (-1.0, 1.5)], 2).unwrap();
        let grid = Grid::new(2, 64, 4.0).unwrap();
        let s = fam.sample(&grid).unwrap();
        let dm = s.discrete_moments();
        for (i, row) in dm.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let t = if i == j { 1.0 } else { 0.0 };
                assert!((v - t).abs() < 1e-10);
            }
        }
        assert!(s.raw_defect > 0.0);
        let dense = s.dense(0);
        let geo = grid.geometry();
        for p in 0..grid.len() {
            if !fam.contains(geo.point(p)) {
                assert_eq!(dense[p], 0.0);
            }
        }
    }
}
