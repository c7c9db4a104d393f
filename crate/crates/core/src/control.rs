//! Tensor moments, the moment-cancelled flux `R_m`, and the control force.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::fit::{temporal_fit, DecayFit};
use crate::grid::Grid;
use crate::multi_index::{indices_up_to, MultiIndex};
use crate::profiles::SampledFamily;

/// Indices `|α| ≤ m - 1` driving the order-`m` control (empty for `m = 0`).
pub fn control_indices(n: usize, m: usize) -> Vec<MultiIndex> {
    if m == 0 {
        Vec::new()
    } else {
        indices_up_to(n, m - 1)
    }
}

/// `A_α(t_k) = ∫ y^α (u ⊗ u)(y, t_k) dy` for `|α| ≤ m - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSignal {
    pub order: usize,
    pub dim: usize,
    pub indices: Vec<MultiIndex>,
    pub times: Vec<f64>,
    /// `values[k][a]` is the row-major `n × n` matrix for `indices[a]` at
    /// `times[k]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl MomentSignal {
    pub fn new(dim: usize, order: usize) -> Self {
        MomentSignal {
            order,
            dim,
            indices: control_indices(dim, order),
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn push(&mut self, t: f64, slice: Vec<Vec<f64>>) -> Result<()> {
        if slice.len() != self.indices.len() {
            return Err(Error::InvalidInput(format!(
                "moment slice has {} matrices, expected {}",
                slice.len(),
                self.indices.len()
            )));
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidInput("signal times must increase".into()));
            }
        }
        self.times.push(t);
        self.values.push(slice);
        Ok(())
    }

    /// Linear interpolation in time (reporting only).
    pub fn interpolate(&self, t: f64) -> Option<Vec<Vec<f64>>> {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 || self.times.is_empty() {
            return None;
        }
        if k == self.times.len() {
            return (self.times[k - 1] == t).then(|| self.values[k - 1].clone());
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        Some(
            self.values[k - 1]
                .iter()
                .zip(&self.values[k])
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect())
                .collect(),
        )
    }
}

/// Trapezoid moments `h^n Σ y^α a(y)` of several arrays for several indices:
/// `out[a][c]` for `indices[a]` and `arrays[c]`.
pub fn grid_moments(grid: &Grid, arrays: &[&[f64]], indices: &[MultiIndex]) -> Vec<Vec<f64>> {
    let geo = grid.geometry();
    let dv = grid.cell_volume();
    indices
        .par_iter()
        .map(|alpha| {
            let w: Vec<f64> = (0..grid.len()).map(|p| alpha.monomial(geo.point(p))).collect();
            arrays
                .iter()
                .map(|a| a.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() * dv)
                .collect()
        })
        .collect()
}

fn outer(u: &GridField, v: &GridField) -> Result<Vec<Vec<f64>>> {
    u.check_compatible(v)?;
    let n = u.grid().dim();
    if u.components() != n {
        return Err(Error::InvalidInput("tensor moments need vector fields".into()));
    }
    Ok((0..n * n)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / n, c % n);
            u.component(i).iter().zip(v.component(j)).map(|(a, b)| a * b).collect()
        })
        .collect())
}

/// `∫ y^α u_i v_j dy` for `|α| ≤ m - 1`, one row-major matrix per index.
pub fn tensor_moments(u: &GridField, v: &GridField, m: usize) -> Result<Vec<Vec<f64>>> {
    let prod = outer(u, v)?;
    let refs: Vec<&[f64]> = prod.iter().map(|c| c.as_slice()).collect();
    Ok(grid_moments(u.grid(), &refs, &control_indices(u.grid().dim(), m)))
}

/// Subtract `Σ_{|α|≤m-1} χ_α A_α` from the product arrays in place and
/// return the subtracted moments `A_α`.
pub fn cancel_moments(
    products: &mut [Vec<f64>],
    family: Option<&SampledFamily>,
    grid: &Grid,
    m: usize,
) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    let family = family.ok_or(Error::FamilyOrder { have: 0, need: m })?;
    check_family(family, grid, m)?;
    let indices = control_indices(grid.dim(), m);
    let refs: Vec<&[f64]> = products.iter().map(|c| c.as_slice()).collect();
    let moments = grid_moments(grid, &refs, &indices);
    for (alpha, a) in indices.iter().zip(&moments) {
        let k = family.position(alpha).expect("checked by check_family");
        let chi = &family.samples[k];
        for (c, prod) in products.iter_mut().enumerate() {
            let coeff = a[c];
            for (&p, &x) in family.support.iter().zip(chi) {
                prod[p] -= coeff * x;
            }
        }
    }
    Ok(moments)
}

fn check_family(family: &SampledFamily, grid: &Grid, m: usize) -> Result<()> {
    if family.order < m {
        return Err(Error::FamilyOrder {
            have: family.order,
            need: m,
        });
    }
    if family.grid != *grid {
        return Err(Error::InvalidInput("profile family sampled on a different grid".into()));
    }
    Ok(())
}

/// Cancellation certificate of `R_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancellationCertificate {
    /// Orders `|β|` checked (`0..=checked_order`); `None` when nothing is
    /// cancelled (`m = 0`).
    pub checked_order: Option<usize>,
    /// `max |∫ y^β R_m| / ∫ |u ⊗ v| (1+|y|)^m`.
    pub max_relative_moment: f64,
    pub scale: f64,
}

/// `R_m(u, v) = u ⊗ v - Σ_{|α|≤m-1} χ_α ∫ y^α u ⊗ v`, stored row-major.
pub fn assemble_r(
    u: &GridField,
    v: &GridField,
    family: Option<&SampledFamily>,
    m: usize,
) -> Result<(GridField, CancellationCertificate)> {
    let grid = *u.grid();
    let mut prod = outer(u, v)?;
    let geo = grid.geometry();
    let scale: f64 = (0..grid.len())
        .map(|p| {
            let s: f64 = prod.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt();
            s * (1.0 + geo.radius[p]).powi(m as i32)
        })
        .sum::<f64>()
        * grid.cell_volume();
    cancel_moments(&mut prod, family, &grid, m)?;
    let r = GridField::new(grid, prod)?;
    let cert = cancellation_certificate(&r, m.checked_sub(1), scale);
    Ok((r, cert))
}

/// `max_{|β| ≤ order} |∫ y^β R| / scale`.
pub fn cancellation_certificate(r: &GridField, order: Option<usize>, scale: f64) -> CancellationCertificate {
    let max = match order {
        None => 0.0,
        Some(o) => {
            let refs: Vec<&[f64]> = r.data().iter().map(|c| c.as_slice()).collect();
            let moms = grid_moments(r.grid(), &refs, &indices_up_to(r.grid().dim(), o));
            let worst = moms.iter().flatten().fold(0.0, |a: f64, b| a.max(b.abs()));
            if scale > 0.0 {
                worst / scale
            } else {
                worst
            }
        }
    };
    CancellationCertificate {
        checked_order: order,
        max_relative_moment: max,
        scale,
    }
}

/// `f_m(x, t_k) = Σ A_α(t_k) χ_α(x)`, held as signal plus family and
/// materialised on demand.
#[derive(Debug, Clone)]
pub struct ForceField {
    pub signal: MomentSignal,
    family: Option<SampledFamily>,
    grid: Grid,
}

pub fn assemble_force(grid: &Grid, family: Option<&SampledFamily>, signal: &MomentSignal) -> Result<ForceField> {
    if signal.dim != grid.dim() {
        return Err(Error::InvalidInput("signal and grid dimensions differ".into()));
    }
    if !signal.is_empty() {
        let fam = family.ok_or(Error::FamilyOrder {
            have: 0,
            need: signal.order,
        })?;
        check_family(fam, grid, signal.order)?;
    }
    Ok(ForceField {
        signal: signal.clone(),
        family: family.cloned(),
        grid: *grid,
    })
}

impl ForceField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.signal.times
    }

    /// Values on the family support: `out[c][s]`.
    fn support_values(&self, k: usize) -> Vec<Vec<f64>> {
        let n = self.grid.dim();
        let Some(fam) = &self.family else {
            return vec![Vec::new(); n * n];
        };
        let mut out = vec![vec![0.0; fam.support.len()]; n * n];
        if self.signal.is_empty() {
            return out;
        }
        for (alpha, a) in self.signal.indices.iter().zip(&self.signal.values[k]) {
            let chi = &fam.samples[fam.position(alpha).expect("checked at assembly")];
            for (c, o) in out.iter_mut().enumerate() {
                for (v, x) in o.iter_mut().zip(chi) {
                    *v += a[c] * x;
                }
            }
        }
        out
    }

    /// Full matrix field at stored time index `k`.
    pub fn snapshot(&self, k: usize) -> GridField {
        let n = self.grid.dim();
        let mut data = vec![vec![0.0; self.grid.len()]; n * n];
        if let Some(fam) = &self.family {
            for (c, vals) in self.support_values(k).into_iter().enumerate() {
                for (&p, v) in fam.support.iter().zip(vals) {
                    data[c][p] = v;
                }
            }
        }
        GridField::new(self.grid, data).expect("shape fixed")
    }

    /// Largest absolute entry of `f_m(·, t_k)`.
    pub fn sup_norm(&self, k: usize) -> f64 {
        self.support_values(k)
            .iter()
            .flatten()
            .fold(0.0, |a: f64, b| a.max(b.abs()))
    }

    /// `(t_k, sup |f_m(·, t_k)|)`
    pub fn sup_series(&self) -> Vec<(f64, f64)> {
        (0..self.signal.times.len())
            .map(|k| (self.signal.times[k], self.sup_norm(k)))
            .collect()
    }

    /// Grid points where the force may be nonzero.
    pub fn support(&self) -> &[usize] {
        self.family.as_ref().map(|f| f.support.as_slice()).unwrap_or(&[])
    }
}

/// Temporal slope of `sup |f_m|` over `window`.
pub fn force_decay_report(force: &ForceField, window: (f64, f64)) -> Result<DecayFit> {
    temporal_fit(&force.sup_series(), window)
}

/// Target slope `-(n + 3 + m)/2` of the force sup norm.
pub fn force_target_slope(n: usize, m: usize) -> f64 {
    -((n + 3 + m) as f64) / 2.0
}

/// `(∫_{|y|<√t} |y|^k |u|², ∫_{|y|≥√t} |y|^k |u|²)`.
pub fn split_moment_integrals(u: &GridField, k: usize, t: f64) -> (f64, f64) {
    let grid = u.grid();
    let geo = grid.geometry();
    let mag = u.magnitude();
    let split = t.sqrt();
    let (mut inner, mut outer) = (0.0, 0.0);
    for (r, a) in geo.radius.iter().zip(&mag) {
        let v = r.powi(k as i32) * a * a;
        if *r < split {
            inner += v;
        } else {
            outer += v;
        }
    }
    let dv = grid.cell_volume();
    (inner * dv, outer * dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::build_chi_family;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        Grid::new(2, 64, 8.0).unwrap()
    }

    fn gaussian_pair(g: Grid) -> GridField {
        GridField::from_fn(g, 2, |x, out| {
            let e = (-(x[0] * x[0] + x[1] * x[1])).exp();
            out[0] = e;
            out[1] = x[0] * e;
        })
    }

    #[test]
    fn zero_fields_have_zero_moments() {
        let z = GridField::zeros(grid(), 2);
        let m = tensor_moments(&z, &z, 3).unwrap();
        assert!(m.iter().flatten().all(|&v| v == 0.0));
        assert!(tensor_moments(&z, &z, 0).unwrap().is_empty());
    }

    #[test]
    fn gaussian_moments_match_closed_form() {
        // u = (e^{-|x|²}, x₁ e^{-|x|²}):
        // ∫ e^{-2|x|²} = π/2, ∫ x₁² e^{-2|x|²} = π/8, ∫ x₁ e^{-2|x|²} = 0.
        let u = gaussian_pair(grid());
        let m = tensor_moments(&u, &u, 2).unwrap();
        let pi = std::f64::consts::PI;
        let a0 = &m[0];
        assert!((a0[0] - pi / 2.0).abs() < 1e-10);
        assert!(a0[1].abs() < 1e-10 && a0[2].abs() < 1e-10);
        assert!((a0[3] - pi / 8.0).abs() < 1e-10);
        assert_eq!(a0[1], a0[2]);
        // A_{(1,0)}: ∫ x₁ u_0 u_1 = ∫ x₁² e^{-2|x|²} = π/8; diagonal entries odd.
        let a10 = &m[1];
        assert!((a10[1] - pi / 8.0).abs() < 1e-10);
        assert!(a10[0].abs() < 1e-10 && a10[3].abs() < 1e-10);
    }

    #[test]
    fn r0_is_the_tensor_product() {
        let u = gaussian_pair(grid());
        let (r, cert) = assemble_r(&u, &u, None, 0).unwrap();
        for p in 0..grid().len() {
            assert_eq!(r.component(1)[p], u.component(0)[p] * u.component(1)[p]);
        }
        assert_eq!(cert.checked_order, None);
    }

    #[test]
    fn insufficient_family_is_rejected() {
        let g = grid();
        let fam = build_chi_family(&[(-1.0, 1.0), (-1.0, 1.0)], 1)
            .unwrap()
            .sample(&g)
            .unwrap();
        let u = gaussian_pair(g);
        assert!(matches!(
            assemble_r(&u, &u, Some(&fam), 2),
            Err(Error::FamilyOrder { have: 1, need: 2 })
        ));
        assert!(assemble_r(&u, &u, None, 1).is_err());
    }

    #[test]
    fn force_of_order_zero_vanishes() {
        let g = grid();
        let mut s = MomentSignal::new(2, 0);
        s.push(0.0, Vec::new()).unwrap();
        s.push(1.0, Vec::new()).unwrap();
        let f = assemble_force(&g, None, &s).unwrap();
        assert_eq!(f.snapshot(1).max_abs(), 0.0);
        assert!(force_decay_report(&f, (0.5, 1.0)).is_err());
    }

    #[test]
    fn unit_signal_reproduces_the_profile() {
        let g = grid();
        let fam = build_chi_family(&[(-1.0, 1.5), (-1.5, 1.0)], 1)
            .unwrap()
            .sample(&g)
            .unwrap();
        let mut s = MomentSignal::new(2, 1);
        s.push(0.0, vec![vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
        let f = assemble_force(&g, Some(&fam), &s).unwrap();
        let chi0 = fam.dense(0);
        let snap = f.snapshot(0);
        assert_eq!(snap.component(0), chi0.as_slice());
        assert!(snap.component(1).iter().all(|&v| v == 0.0));
        let m = chi0.iter().fold(0.0, |a: f64, b| a.max(b.abs()));
        assert_eq!(f.sup_norm(0), m);
    }

    #[test]
    fn flux_difference_is_supported_in_the_box() {
        let g = grid();
        let fam = build_chi_family(&[(-1.0, 1.0), (-1.0, 1.0)], 2)
            .unwrap()
            .sample(&g)
            .unwrap();
        let u = gaussian_pair(g);
        let (r, _) = assemble_r(&u, &u, Some(&fam), 2).unwrap();
        let (r0, _) = assemble_r(&u, &u, None, 0).unwrap();
        let inside: std::collections::HashSet<usize> = fam.support.iter().copied().collect();
        for c in 0..4 {
            for p in 0..g.len() {
                if !inside.contains(&p) {
                    assert_eq!(r.component(c)[p], r0.component(c)[p]);
                }
            }
        }
    }

    #[test]
    fn signal_interpolation() {
        let mut s = MomentSignal::new(2, 1);
        s.push(0.0, vec![vec![0.0; 4]]).unwrap();
        s.push(2.0, vec![vec![2.0; 4]]).unwrap();
        assert_eq!(s.interpolate(0.5).unwrap()[0][0], 0.5);
        assert!(s.interpolate(-1.0).is_none());
        assert!(s.push(1.0, vec![vec![0.0; 4]]).is_err());
    }

    #[test]
    fn bilinearity_of_r() {
        let g = grid();
        let fam = build_chi_family(&[(-1.0, 1.0), (-1.0, 1.0)], 2)
            .unwrap()
            .sample(&g)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rand_field = |rng: &mut ChaCha8Rng| {
            GridField::from_fn(g, 2, |x, out| {
                let e = (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp();
                out[0] = e * rng.random_range(-1.0..1.0);
                out[1] = e * rng.random_range(-1.0..1.0);
            })
        };
        let u = rand_field(&mut rng);
        let w = rand_field(&mut rng);
        let v = rand_field(&mut rng);
        let (ruv, _) = assemble_r(&u, &v, Some(&fam), 2).unwrap();
        let (rwv, _) = assemble_r(&w, &v, Some(&fam), 2).unwrap();
        let (rs, _) = assemble_r(&u.axpy(3.0, &w).unwrap(), &v, Some(&fam), 2).unwrap();
        let expect = ruv.axpy(3.0, &rwv).unwrap();
        assert!(rs.axpy(-1.0, &expect).unwrap().max_abs() < 1e-13);
    }
}
