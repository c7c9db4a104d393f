//! Integration tests of the two solvers and the Duhamel operator.

use decaylab::control::{assemble_r, tensor_moments};
use decaylab::field::{make_initial_datum, DatumProfile, DatumSpec, GridField};
use decaylab::multi_index::indices_up_to;
use decaylab::solver::{
    duhamel_bilinear, picard_solve, residual_check, timestep_solve, DuhamelSettings, OutputTimes, PicardSettings,
    SolverConfig, StationaryPair, StepRule, TimeGridSpec, TimestepSettings,
};
use decaylab::{build_chi_family, ControlProfileFamily, Grid, SampledFamily};

fn config(m: usize, horizon: f64, dt: f64) -> SolverConfig {
    SolverConfig {
        m,
        horizon,
        time_grid: TimeGridSpec {
            step: StepRule::Uniform { dt },
            outputs: OutputTimes::Uniform { count: 4 },
        },
        picard: PicardSettings::default(),
        duhamel: DuhamelSettings::default(),
        timestep: TimestepSettings {
            dt: dt / 4.0,
            ..Default::default()
        },
        dealias: true,
        nonlinear_scale: 1.0,
        retain_nodes: false,
    }
}

fn datum(grid: &Grid, amp: f64, mp: usize) -> GridField {
    let spec = DatumSpec {
        profile: DatumProfile::Bump { radius: 2.5 },
        derivative_order: Some(mp),
        amplitude: amp,
    };
    make_initial_datum(grid, &spec, mp).unwrap().0
}

fn family(grid: &Grid, m: usize) -> (ControlProfileFamily, SampledFamily) {
    let fam = build_chi_family(&[(-2.0, 2.0), (-2.0, 2.0)], m).unwrap();
    let s = fam.sample(grid).unwrap();
    (fam, s)
}

fn grid() -> Grid {
    Grid::new(2, 64, 16.0).unwrap()
}

#[test]
fn snapshots_stay_divergence_free() {
    let g = grid();
    let (_, fam) = family(&g, 2);
    for m in 0..=2 {
        let u0 = datum(&g, 2.0, m);
        let cfg = config(m, 1.0, 0.05);
        let p = picard_solve(&u0, Some(&fam), &cfg).unwrap();
        let t = timestep_solve(&u0, Some(&fam), &cfg).unwrap();
        assert!(p.max_divergence_ratio().unwrap() <= 1e-9);
        assert!(t.max_divergence_ratio().unwrap() <= 1e-9);
        assert!(p.increments.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn solvers_agree_for_each_control_order() {
    let g = grid();
    let (_, fam) = family(&g, 2);
    for m in 0..=2 {
        let u0 = datum(&g, 2.0, m);
        // The control flux carries grid-scale content, so the two
        // discretisations need finer steps to meet at m > 0.
        let dt = if m == 0 { 0.01 } else { 0.001 };
        let mut cfg = config(m, 1.0, dt);
        cfg.timestep.dt = dt / 5.0;
        let p = picard_solve(&u0, Some(&fam), &cfg).unwrap();
        let t = timestep_solve(&u0, Some(&fam), &cfg).unwrap();
        for (a, b) in p.snapshots.iter().zip(&t.snapshots) {
            let dev = a.axpy(-1.0, b).unwrap().sup_norm() / a.sup_norm();
            assert!(dev < 1e-5, "m={m}: {dev}");
        }
    }
}

#[test]
fn heat_limit_has_no_residual() {
    let g = grid();
    let u0 = datum(&g, 3.0, 0);
    let mut cfg = config(0, 1.0, 0.1);
    cfg.nonlinear_scale = 0.0;
    cfg.retain_nodes = true;
    for traj in [
        picard_solve(&u0, None, &cfg).unwrap(),
        timestep_solve(&u0, None, &cfg).unwrap(),
    ] {
        for (t, s) in traj.output_times.iter().zip(&traj.snapshots) {
            let heat = u0.heat_evolve(*t).unwrap();
            assert!(s.axpy(-1.0, &heat).unwrap().max_abs() <= 1e-10 * u0.max_abs());
        }
        let rep = residual_check(&traj, &u0, None, &cfg).unwrap();
        assert!(rep.max_sup() <= 1e-10 && rep.max_weighted() <= 1e-10);
    }
}

#[test]
fn timestep_residual_converges_at_second_order() {
    let g = grid();
    let u0 = datum(&g, 4.0, 0);
    let residual = |dt: f64| {
        let mut cfg = config(0, 1.0, dt);
        cfg.timestep.dt = dt;
        cfg.retain_nodes = true;
        let tr = timestep_solve(&u0, None, &cfg).unwrap();
        residual_check(&tr, &u0, None, &cfg).unwrap().max_sup()
    };
    let (r1, r2, r3) = (residual(0.04), residual(0.02), residual(0.01));
    let o1 = (r1 / r2).log2();
    let o2 = (r2 / r3).log2();
    assert!(r3 < r2 && r2 < r1, "{r1} {r2} {r3}");
    assert!(o1 > 1.7 && o2 > 1.7, "observed orders {o1}, {o2}");
}

#[test]
fn picard_residual_meets_tolerance() {
    let g = grid();
    let (_, fam) = family(&g, 1);
    let u0 = datum(&g, 3.0, 1);
    let mut cfg = config(1, 2.0, 0.05);
    cfg.retain_nodes = true;
    let tr = picard_solve(&u0, Some(&fam), &cfg).unwrap();
    assert!(tr.converged);
    let inline = tr.residual.clone().unwrap();
    let rep = residual_check(&tr, &u0, Some(&fam), &cfg).unwrap();
    let tol = cfg.picard.tolerance;
    assert!(inline.max_weighted() <= 10.0 * tol);
    assert!(rep.max_weighted() <= 10.0 * tol, "{}", rep.max_weighted());
}

/// The controlled and uncontrolled fluxes differ by `f = Σ χ_α A_α`, zero
/// outside the control box on the grid. Its divergence, taken analytically
/// through `∂_j χ_α = -(α_j + 1) χ_{α+e_j}`, vanishes there too.
#[test]
fn controlled_and_uncontrolled_right_hand_sides_differ_only_in_the_box() {
    let g = grid();
    let (chi, fam) = family(&g, 2);
    let u0 = datum(&g, 3.0, 0);
    let cfg = config(0, 1.0, 0.1);
    let tr = picard_solve(&u0, None, &cfg).unwrap();
    let geo = g.geometry();
    for u in &tr.snapshots {
        for m in 1..=2 {
            let (r0, _) = assemble_r(u, u, None, 0).unwrap();
            let (rm, _) = assemble_r(u, u, Some(&fam), m).unwrap();
            let diff = r0.axpy(-1.0, &rm).unwrap();
            let moments = tensor_moments(u, u, m).unwrap();
            let indices = indices_up_to(2, m - 1);
            let mut inside = 0.0f64;
            for p in 0..g.len() {
                let x = geo.point(p);
                let mut div = [0.0; 2];
                for (alpha, a) in indices.iter().zip(&moments) {
                    for j in 0..2 {
                        let mut up = alpha.clone();
                        up.0[j] += 1;
                        let d = -((alpha.0[j] + 1) as f64) * chi.chi_alpha(&up, x);
                        for (i, v) in div.iter_mut().enumerate() {
                            *v += d * a[j * 2 + i];
                        }
                    }
                }
                if chi.contains(x) {
                    inside = inside.max(div[0].abs().max(div[1].abs()));
                } else {
                    assert_eq!(div, [0.0, 0.0]);
                    for c in 0..4 {
                        assert_eq!(diff.component(c)[p], 0.0);
                    }
                }
            }
            assert!(inside > 0.0);
        }
    }
}

/// `B(u+v, u+v) - B(u-v, u-v) = 2 (B(u, v) + B(v, u))`.
#[test]
fn duhamel_polarization_identity() {
    let g = grid();
    let (_, fam) = family(&g, 2);
    let u = datum(&g, 1.0, 0);
    let v = datum(&g, 1.0, 1);
    let s = DuhamelSettings::default();
    let b = |a: &GridField, c: &GridField, m: usize| {
        let pair = StationaryPair {
            u: a.clone(),
            v: c.clone(),
        };
        duhamel_bilinear(&pair, Some(&fam), m, 1.0, false, &s).unwrap().0
    };
    let sum = u.axpy(1.0, &v).unwrap();
    let dif = u.axpy(-1.0, &v).unwrap();
    for m in 0..=2 {
        let lhs = b(&sum, &sum, m).axpy(-1.0, &b(&dif, &dif, m)).unwrap();
        let rhs = b(&u, &v, m).axpy(1.0, &b(&v, &u, m)).unwrap().scaled(2.0);
        let err = lhs.axpy(-1.0, &rhs).unwrap().max_abs() / rhs.max_abs();
        assert!(err < 1e-12, "m={m}: {err}");
    }
}

#[test]
fn zero_amplitude_is_degenerate() {
    let g = grid();
    let (_, fam) = family(&g, 1);
    let z = GridField::zeros(g, 2);
    let tr = picard_solve(&z, Some(&fam), &config(1, 1.0, 0.1)).unwrap();
    assert_eq!(tr.iterations, 1);
    assert!(tr.snapshots.iter().all(|s| s.max_abs() == 0.0));
    assert!((0..tr.force.times().len()).all(|k| tr.force.sup_norm(k) == 0.0));
}

#[test]
fn insufficient_family_is_rejected() {
    let g = grid();
    let (_, fam) = family(&g, 1);
    let u0 = datum(&g, 1.0, 2);
    let err = picard_solve(&u0, Some(&fam), &config(2, 1.0, 0.1)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
