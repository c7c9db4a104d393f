//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! Criteria 5, 6 and 10 run full experiments; 10 is the 512² headline run
//! and dominates the wall time.

use std::sync::Mutex;

use decaylab::control::assemble_r;
use decaylab::field::{make_initial_datum, DatumProfile, DatumSpec, GridField};
use decaylab::harness::ReportBundle;
use decaylab::harness::{
    run_kernels, run_lemma1_check, run_lemma2_check, run_simulation, ExperimentConfig, ExperimentKind,
};
use decaylab::multi_index::indices_up_to;
use decaylab::solver::{
    contraction_threshold, picard_solve, residual_check, timestep_solve, OutputTimes, PicardSettings, SolverConfig,
    StepRule, TimeGridSpec, TimestepSettings,
};
use decaylab::{build_chi_family, compute_moments, BumpSpec, Grid, MomentMatrix};

static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(n: u32, ok: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n}: {detail}");
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn solver_config(m: usize, horizon: f64, dt: f64) -> SolverConfig {
    SolverConfig {
        m,
        horizon,
        time_grid: TimeGridSpec {
            step: StepRule::Uniform { dt },
            outputs: OutputTimes::Uniform { count: 4 },
        },
        picard: PicardSettings::default(),
        duhamel: Default::default(),
        timestep: TimestepSettings {
            dt: dt / 5.0,
            ..Default::default()
        },
        dealias: true,
        nonlinear_scale: 1.0,
        retain_nodes: false,
    }
}

fn bump_datum(grid: &Grid, amplitude: f64, order: usize) -> GridField {
    let spec = DatumSpec {
        profile: DatumProfile::Bump { radius: 2.5 },
        derivative_order: Some(order),
        amplitude,
    };
    make_initial_datum(grid, &spec, order).unwrap().0
}

fn summary(bundle: &ReportBundle) -> String {
    let mut parts: Vec<String> = bundle
        .exponents
        .iter()
        .map(|e| format!("{}={:.3}{}", e.name, e.slope, if e.pass { "" } else { "(x)" }))
        .collect();
    parts.extend(
        bundle
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{}={:.3e}(x)", c.name, c.value)),
    );
    parts.join(" ")
}

#[test]
fn criterion_01_profile_biorthogonality() {
    let _g = lock();
    let mut worst: f64 = 0.0;
    for m in 0..=6 {
        let fam = build_chi_family(&[(-2.0, 2.0), (-2.0, 2.0)], m).unwrap();
        worst = worst.max(fam.biorthogonality(m).unwrap().max_error);
    }
    verdict(1, worst <= 1e-8, format!("max |∫x^β χ_α - δ| = {worst:.2e} (≤ 1e-8)"));
}

#[test]
fn criterion_02_moment_matrix_positivity() {
    let _g = lock();
    let bump = BumpSpec::new(-2.0, 2.0).unwrap();
    let mu = compute_moments(&bump, 16).unwrap();
    let mins: Vec<f64> = (0..=8)
        .map(|m| MomentMatrix::from_moments(&mu, m).unwrap().min_eigenvalue())
        .collect();
    let least = mins.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        2,
        mins.iter().all(|&v| v > 0.0),
        format!("smallest eigenvalue over m ≤ 8 = {least:.3e}"),
    );
}

#[test]
fn criteria_03_04_kernel_l1_law_and_tail() {
    let _g = lock();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Kernels);
    cfg.output_dir = dir.path().to_path_buf();
    assert_eq!(cfg.kernels.times, vec![0.25, 1.0, 4.0]);
    let b = run_kernels(&cfg).unwrap();
    let spread = b.check("kernel_l1_scaled_spread").unwrap().value;
    let tail = b.exponent("kernel_tail").unwrap();
    let c3 = spread <= 0.005;
    let c4 = (tail.slope + 3.0).abs() <= 0.15 && tail.window == (5.0, 20.0);
    println!(
        "criterion 3: {} L1·t^(1/2) relative spread = {spread:.2e} (≤ 5e-3)",
        if c3 { "PASS" } else { "FAIL" }
    );
    println!(
        "criterion 4: {} tail slope = {:.4} over [{}, {}] (-3 ± 0.15)",
        if c4 { "PASS" } else { "FAIL" },
        tail.slope,
        tail.window.0,
        tail.window.1
    );
    assert!(c3 && c4);
}

#[test]
fn criterion_05_heat_decay_of_vanishing_moment_data() {
    let _g = lock();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Lemma1);
    cfg.output_dir = dir.path().to_path_buf();
    let b = run_lemma1_check(&cfg).unwrap();
    let mut ok = true;
    for m in 0..=2usize {
        let kf = (3 + m) as f64;
        let t = b.exponent(&format!("lemma1_m{m}_temporal")).unwrap();
        let s = b.exponent(&format!("lemma1_m{m}_spatial")).unwrap();
        ok &= (t.slope + kf / 2.0).abs() <= 0.2 && t.window == (10.0, 100.0);
        ok &= (s.slope + kf).abs() <= 0.3;
    }
    verdict(5, ok, summary(&b));
}

#[test]
fn criterion_06_bilinear_spatial_tails() {
    let _g = lock();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Lemma2);
    cfg.output_dir = dir.path().to_path_buf();
    assert_eq!((cfg.lemma2.size, cfg.lemma2.time), (256, 1.0));
    let b = run_lemma2_check(&cfg).unwrap();
    let mut ok = true;
    for m in 0..=2usize {
        let e = b.exponent(&format!("lemma2_m{m}_tail")).unwrap();
        ok &= (e.slope + (3 + m) as f64).abs() <= 0.3;
    }
    verdict(6, ok, summary(&b));
}

#[test]
fn criterion_07_flux_moment_cancellation() {
    let _g = lock();
    let grid = Grid::new(2, 128, 16.0).unwrap();
    let u = bump_datum(&grid, 1.0, 0);
    let v = GridField::from_fn(grid, 2, |x, o| {
        let g = (-((x[0] - 1.0).powi(2) + (x[1] + 0.5).powi(2)) / 2.0).exp();
        o[0] = -(x[1] + 0.5) * g;
        o[1] = (x[0] - 1.0) * g;
    });
    let geo = grid.geometry();
    let mut worst: f64 = 0.0;
    for m in 1..=4 {
        let fam = build_chi_family(&[(-2.0, 2.0), (-2.0, 2.0)], m)
            .unwrap()
            .sample(&grid)
            .unwrap();
        // R_m cancels |β| ≤ m-1; R_{m+1} from the next family also cancels |β| = m.
        for (mm, top) in [(m, m - 1), (m + 1, m)] {
            let f = if mm == m {
                fam.clone()
            } else {
                build_chi_family(&[(-2.0, 2.0), (-2.0, 2.0)], mm)
                    .unwrap()
                    .sample(&grid)
                    .unwrap()
            };
            let (r, cert) = assemble_r(&u, &v, Some(&f), mm).unwrap();
            for beta in indices_up_to(2, top) {
                for c in 0..4 {
                    let s: f64 = r
                        .component(c)
                        .iter()
                        .enumerate()
                        .map(|(p, val)| beta.monomial(geo.point(p)) * val)
                        .sum::<f64>()
                        * grid.cell_volume();
                    worst = worst.max(s.abs() / cert.scale);
                }
            }
        }
    }
    verdict(7, worst <= 1e-9, format!("max |∫y^β R| / scale = {worst:.2e} (≤ 1e-9)"));
}

#[test]
fn criterion_08_picard_contraction_signature() {
    let _g = lock();
    let grid = Grid::new(2, 64, 16.0).unwrap();
    let fam = build_chi_family(&[(-2.0, 2.0), (-2.0, 2.0)], 1)
        .unwrap()
        .sample(&grid)
        .unwrap();
    let unit = bump_datum(&grid, 1.0, 1);
    let cfg = solver_config(1, 2.0, 0.05);
    let th = contraction_threshold(&unit, Some(&fam), &cfg, 50.0, 4).unwrap();
    let a = 0.25 * th.contracting;
    let tr = picard_solve(&unit.scaled(a), Some(&fam), &cfg).unwrap();
    let half = picard_solve(&unit.scaled(0.5 * a), Some(&fam), &cfg).unwrap();
    let ratios_ok = tr.converged && tr.ratios.iter().all(|&r| r < 1.0);
    let exponent = (tr.absolute_increments[0] / half.absolute_increments[0]).log2();
    verdict(
        8,
        ratios_ok && (exponent - 2.0).abs() <= 0.1,
        format!(
            "threshold ≈ {:.3}, max ratio {:.3} at A = {a:.3}, first-increment exponent {exponent:.4} (2 ± 0.1)",
            th.estimate(),
            tr.ratios.iter().copied().fold(0.0, f64::max)
        ),
    );
}

#[test]
fn criterion_09_solver_cross_validation() {
    let _g = lock();
    let grid = Grid::new(2, 128, 16.0).unwrap();
    let u0 = bump_datum(&grid, 5.0, 0);
    let cfg = solver_config(0, 1.0, 0.01);
    let p = picard_solve(&u0, None, &cfg).unwrap();
    let t = timestep_solve(&u0, None, &cfg).unwrap();
    let dev = p
        .snapshots
        .iter()
        .zip(&t.snapshots)
        .map(|(a, b)| a.axpy(-1.0, b).unwrap().sup_norm() / a.sup_norm())
        .fold(0.0, f64::max);
    verdict(9, dev <= 1e-5, format!("max relative deviation {dev:.2e} (≤ 1e-5)"));
}

#[test]
fn criterion_10_controlled_decay_headline() {
    let _g = lock();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Simulate);
    cfg.output_dir = dir.path().to_path_buf();
    cfg.plots = false;
    let s = &cfg.simulate;
    assert_eq!((s.dim, s.size, s.m, s.horizon, s.baseline), (2, 512, 1, 64.0, true));
    let b = run_simulation(&cfg).unwrap();
    let cs = b.exponent("controlled_spatial").unwrap().slope;
    let bs = b.exponent("baseline_spatial").unwrap().slope;
    let ct = b.exponent("controlled_temporal").unwrap().slope;
    let cf = b.exponent("controlled_force").unwrap().slope;
    let ok = bs - cs >= 0.7 && ct <= -2.0 + 0.3 && (cf + 3.0).abs() <= 0.3;
    verdict(
        10,
        ok,
        format!(
            "steepening {:.3} (≥ 0.7), temporal {ct:.3} (≤ -1.7), force {cf:.3} (-3 ± 0.3)",
            bs - cs
        ),
    );
}

#[test]
fn criterion_11_integral_equation_residual() {
    let _g = lock();
    let grid = Grid::new(2, 64, 16.0).unwrap();
    let mut worst: f64 = 0.0;
    for m in 0..=2 {
        let fam = build_chi_family(&[(-2.0, 2.0), (-2.0, 2.0)], 2)
            .unwrap()
            .sample(&grid)
            .unwrap();
        let u0 = bump_datum(&grid, 3.0, m);
        let mut cfg = solver_config(m, 2.0, 0.05);
        cfg.retain_nodes = true;
        let tr = picard_solve(&u0, Some(&fam), &cfg).unwrap();
        assert!(tr.converged);
        let rep = residual_check(&tr, &u0, Some(&fam), &cfg).unwrap();
        assert_eq!(rep.weighted.len(), tr.output_times.len());
        worst = worst.max(rep.max_weighted());
    }
    let tol = PicardSettings::default().tolerance;
    verdict(
        11,
        worst <= 10.0 * tol,
        format!("max residual {worst:.2e} (≤ {:.0e})", 10.0 * tol),
    );
}
