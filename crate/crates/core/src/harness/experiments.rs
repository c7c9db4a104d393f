//! Experiment drivers behind the command-line subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use super::config::{ExperimentConfig, ExperimentKind};
use super::report::{emit_reports, load_bundle, Axis, NamedSeries, PlotSpec, ReportBundle, ReportFormats};
use crate::control::force_target_slope;
use crate::error::{Error, Result};
use crate::field::{inverse_many, make_initial_datum, DatumSpec, FreeSpaceHeat, GridField};
use crate::fit::{
    fit_points, shell_maxima, spatial_fit, temporal_fit, Check, Exponent, FitKind, Relation, SpatialFitOptions,
};
use crate::grid::Grid;
use crate::io::{export_family, load_kernel_profile, save_kernel_profile, write_trajectory};
use crate::kernels::{build_oseen_profile, kernel_bounds_report, L1Options, ProfileGridSpec};
use crate::profiles::{build_chi_family, build_chi_family_with_shape, compute_moments, BumpSpec, MomentMatrix};
use crate::solver::{
    duhamel_bilinear, picard_solve, timestep_solve, DuhamelSettings, SolverConfig, StationaryPair, Trajectory,
};

/// Runs the configured experiment and writes its reports to the output
/// directory.
pub fn run_experiment(config: &ExperimentConfig, formats: ReportFormats) -> Result<ReportBundle> {
    config.validate()?;
    let bundle = match config.kind {
        ExperimentKind::Profiles => run_profiles(config)?,
        ExperimentKind::Kernels => run_kernels(config)?,
        ExperimentKind::Lemma1 => run_lemma1_check(config)?,
        ExperimentKind::Lemma2 => run_lemma2_check(config)?,
        ExperimentKind::Simulate => run_simulation(config)?,
        ExperimentKind::Report => load_bundle(&config.report.input_dir)?,
    };
    emit_reports(&bundle, &config.output_dir, formats)?;
    Ok(bundle)
}

fn geometric(a: f64, b: f64, count: usize) -> Vec<f64> {
    let q = (b / a).powf(1.0 / (count - 1) as f64);
    (0..count)
        .map(|k| if k + 1 == count { b } else { a * q.powi(k as i32) })
        .collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn plot(name: &str, title: &str, series: &[String], exponents: &[String]) -> PlotSpec {
    PlotSpec {
        name: name.into(),
        title: title.into(),
        series: series.to_vec(),
        exponents: exponents.to_vec(),
    }
}

pub fn run_profiles(config: &ExperimentConfig) -> Result<ReportBundle> {
    let p = &config.profiles;
    let mut bundle = ReportBundle::new(config);
    let boxes = vec![p.interval; p.dim];
    let mut certs = Vec::new();
    for order in 0..=p.max_order {
        let fam = build_chi_family_with_shape(&boxes, order, p.shape)?;
        let cert = fam.biorthogonality(order)?;
        bundle.checks.push(Check::new(
            format!("biorthogonality_m{order}"),
            cert.max_error,
            0.0,
            p.tolerance,
            Relation::AtMost,
        ));
        let prof = &fam.profiles[0];
        let (a, b) = p.interval;
        let pts: Vec<(f64, f64)> = (0..p.profile_samples)
            .map(|k| {
                let s = a + (b - a) * k as f64 / (p.profile_samples - 1) as f64;
                (s, prof.value(s))
            })
            .collect();
        bundle.series.push(NamedSeries {
            name: format!("profile_m{order}"),
            axis: Axis::Radius,
            points: pts,
        });
        certs.push(json!({
            "order": order,
            "max_error": cert.max_error,
            "moment_residual": prof.max_residual(),
            "condition_number": prof.condition_number,
        }));
    }
    let bump = BumpSpec::with_shape(p.interval.0, p.interval.1, p.shape)?;
    let moments = compute_moments(&bump, 2 * p.max_matrix_order)?;
    let mut matrices = Vec::new();
    for order in 0..=p.max_matrix_order {
        let mm = MomentMatrix::from_moments(&moments, order)?;
        let eig = mm.eigenvalues();
        let min = mm.min_eigenvalue();
        bundle.checks.push(Check::new(
            format!("moment_matrix_min_eigenvalue_m{order}"),
            min,
            f64::MIN_POSITIVE,
            0.0,
            Relation::AtLeast,
        ));
        matrices.push(json!({
            "order": order,
            "eigenvalues": eig,
            "condition_number": mm.condition_number(),
        }));
    }
    let mut export = serde_json::Value::Null;
    if p.export_size > 0 {
        let grid = Grid::new(p.dim, p.export_size, p.export_half_width)?;
        let fam = build_chi_family_with_shape(&boxes, p.export_order, p.shape)?;
        let sampled = fam.sample(&grid)?;
        let manifest = export_family(&config.output_dir.join("family"), &fam, &sampled)?;
        export = serde_json::to_value(manifest)?;
    }
    bundle.data = json!({ "certificates": certs, "moment_matrices": matrices, "family_export": export });
    Ok(bundle)
}

pub fn run_kernels(config: &ExperimentConfig) -> Result<ReportBundle> {
    let k = &config.kernels;
    let n = k.dim;
    let mut bundle = ReportBundle::new(config);
    let mut spec = ProfileGridSpec::default_for(n);
    if k.size > 0 {
        spec.size = k.size;
        spec.half_width = k.half_width;
    }
    if let Some(w) = k.tail_window {
        spec.tail_window = w;
    }
    let cache = k.cache_dir.as_ref().map(|d| resolve(&config.output_dir, d));
    let cached = match &cache {
        Some(dir) => load_kernel_profile(dir, n, spec.size, spec.half_width)?,
        None => None,
    };
    let cache_hit = cached.is_some();
    let profile = match cached {
        Some(p) => p,
        None => {
            let p = build_oseen_profile(n, &spec)?;
            if let Some(dir) = &cache {
                save_kernel_profile(dir, &p)?;
            }
            p
        }
    };
    let report = kernel_bounds_report(&profile, &k.times, Some(spec.tail_window), L1Options::default())?;
    bundle.checks.push(Check::new(
        "kernel_l1_scaled_spread",
        report.l1_spread,
        0.0,
        k.l1_tolerance,
        Relation::AtMost,
    ));
    let tail = report
        .tail_fit
        .as_ref()
        .ok_or_else(|| Error::Tolerance("kernel tail fit unavailable".into()))?;
    bundle.exponents.push(Exponent::from_fit(
        "kernel_tail",
        tail,
        -((n + 1) as f64),
        k.tail_tolerance,
        Relation::Within,
    ));
    let grid = profile.grid();
    let radial = shell_maxima(
        grid,
        &profile.frobenius(),
        (2.0 * grid.spacing(), 0.75 * grid.half_width()),
        64,
    );
    bundle.series.push(NamedSeries {
        name: "kernel_profile".into(),
        axis: Axis::Radius,
        points: radial,
    });
    bundle.series.push(NamedSeries {
        name: "kernel_l1_scaled".into(),
        axis: Axis::Time,
        points: k.times.iter().copied().zip(report.l1_scaled.iter().copied()).collect(),
    });
    bundle.plots.push(plot(
        "kernel_tail",
        "kernel profile |Φ|",
        &["kernel_profile".into()],
        &["kernel_tail".into()],
    ));
    bundle.data = json!({ "report": report, "cache_hit": cache_hit, "profile_l1": profile.l1_norm });
    Ok(bundle)
}

/// `e^{tΔ}` applied spectrally to a stored spectrum.
fn heat_at(grid: &Grid, spec: &[Vec<rustfft::num_complex::Complex64>], t: f64) -> Vec<Vec<f64>> {
    let waves = grid.waves();
    let s = spec
        .iter()
        .map(|c| c.iter().zip(&waves.k2).map(|(v, k2)| v * (-t * k2).exp()).collect())
        .collect();
    inverse_many(grid, s)
}

fn magnitude_of(data: &[Vec<f64>], p: usize) -> f64 {
    data.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt()
}

/// Images of a periodic heat solution at distance `d` are negligible when
/// `d² ≥ 160 t` (relative size `e^{-40}`).
fn periodic_safe(distance: f64, t: f64) -> bool {
    distance * distance >= 160.0 * t
}

pub fn run_lemma1_check(config: &ExperimentConfig) -> Result<ReportBundle> {
    let l = &config.lemma1;
    let n = 2;
    let grid = Grid::new(n, l.size, l.half_width)?;
    let geo = grid.geometry();
    let h = grid.spacing();
    let big = 2.0 * l.half_width;
    let inner = l.half_width / 2.0;
    let mut bundle = ReportBundle::new(config);
    let times = geometric(l.temporal_window.0, l.temporal_window.1, l.temporal_samples);
    if !periodic_safe(big - inner, l.temporal_window.1) {
        return Err(Error::Validation(format!(
            "lemma1: box half-width {} too small for t = {}",
            l.half_width, l.temporal_window.1
        )));
    }
    let (e0, e1, ec) = l.envelope_times;
    let env_times = geometric(e0, e1, ec);

    // Ray points on grid nodes: four axis and four diagonal directions.
    let centre = grid.size() / 2;
    let mut rays: Vec<(f64, usize, [f64; 2])> = Vec::new();
    let (lo, hi) = l.spatial_window;
    for k in 1..grid.size() / 2 {
        let kk = k as isize;
        for (dx, dy, scale) in [
            (1, 0, 1.0),
            (-1, 0, 1.0),
            (0, 1, 1.0),
            (0, -1, 1.0),
            (1, 1, std::f64::consts::SQRT_2),
            (-1, 1, std::f64::consts::SQRT_2),
            (1, -1, std::f64::consts::SQRT_2),
            (-1, -1, std::f64::consts::SQRT_2),
        ] {
            let r = k as f64 * h * scale;
            if r < lo || r > hi {
                continue;
            }
            let i = centre as isize + dx * kk;
            let j = centre as isize + dy * kk;
            if i < 0 || j < 0 || i >= grid.size() as isize || j >= grid.size() as isize {
                continue;
            }
            let p = grid.flatten(&[i as usize, j as usize]);
            let x = geo.point(p);
            rays.push((r, p, [x[0], x[1]]));
        }
    }
    if rays.is_empty() {
        return Err(Error::Validation(
            "lemma1: spatial window contains no grid points".into(),
        ));
    }

    let mut per_order = Vec::new();
    let mut t_names = Vec::new();
    let mut s_names = Vec::new();
    let mut t_exps = Vec::new();
    let mut s_exps = Vec::new();
    for &m in &l.orders {
        let kf = (n + 1 + m) as f64;
        let spec = DatumSpec {
            profile: l.profile,
            derivative_order: Some(m),
            amplitude: 1.0,
        };
        let (a, cert) = make_initial_datum(&grid, &spec, m)?;
        let ahat = a.spectrum().to_vec();
        let free = FreeSpaceHeat::new(&a);

        // Temporal sup norm on the periodic-safe window.
        let sup_series: Vec<(f64, f64)> = times
            .iter()
            .map(|&t| {
                let u = heat_at(&grid, &ahat, t);
                let s = (0..grid.len())
                    .filter(|&p| geo.radius[p] <= inner)
                    .map(|p| magnitude_of(&u, p))
                    .fold(0.0, f64::max);
                (t, s)
            })
            .collect();
        let tfit = temporal_fit(&sup_series, l.temporal_window)?;
        let tname = format!("lemma1_m{m}_temporal");
        bundle.exponents.push(Exponent::from_fit(
            &tname,
            &tfit,
            -kf / 2.0,
            l.temporal_tolerance,
            Relation::Within,
        ));

        // Path agreement at the first temporal sample.
        let t_probe = times[0];
        let u_probe = heat_at(&grid, &ahat, t_probe);
        let sup_probe = sup_series[0].1;
        let agreement = rays
            .iter()
            .step_by((rays.len() / 16).max(1))
            .map(|(_, p, x)| {
                let f = free.eval(x, t_probe);
                let d: f64 = f
                    .iter()
                    .enumerate()
                    .map(|(c, v)| (v - u_probe[c][*p]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                d / sup_probe
            })
            .fold(0.0, f64::max);
        bundle.checks.push(Check::new(
            format!("lemma1_m{m}_path_agreement"),
            agreement,
            0.0,
            1e-8,
            Relation::AtMost,
        ));

        // Spatial envelope sup_t |e^{tΔ}a| on the rays.
        let mut env = vec![0.0f64; rays.len()];
        for &t in &env_times {
            let spectral = rays.iter().any(|(r, _, _)| *r <= inner && periodic_safe(big - r, t));
            let u = spectral.then(|| heat_at(&grid, &ahat, t));
            let vals: Vec<f64> = rays
                .par_iter()
                .map(|(r, p, x)| match &u {
                    Some(u) if *r <= inner && periodic_safe(big - r, t) => magnitude_of(u, *p),
                    _ => free.eval(x, t).iter().map(|v| v * v).sum::<f64>().sqrt(),
                })
                .collect();
            for (e, v) in env.iter_mut().zip(vals) {
                *e = e.max(v);
            }
        }
        let bins = 32usize;
        let (llo, lhi) = (lo.ln(), hi.ln());
        let mut best: Vec<Option<(f64, f64)>> = vec![None; bins];
        for ((r, _, _), &v) in rays.iter().zip(&env) {
            let b = (((r.ln() - llo) / (lhi - llo) * bins as f64) as usize).min(bins - 1);
            if best[b].is_none_or(|(_, w)| v > w) {
                best[b] = Some((*r, v));
            }
        }
        let env_pts: Vec<(f64, f64)> = best.into_iter().flatten().collect();
        let sfit = fit_points(FitKind::Spatial, &env_pts, l.spatial_window)?;
        let sname = format!("lemma1_m{m}_spatial");
        bundle.exponents.push(Exponent::from_fit(
            &sname,
            &sfit,
            -kf,
            l.spatial_tolerance,
            Relation::Within,
        ));

        // Measured constant: weighted norms of e^{tΔ}a over those of a.
        let a_weighted = (0..grid.len())
            .map(|p| (1.0 + geo.radius[p]).powf(kf) * magnitude_of(a.data(), p))
            .fold(0.0, f64::max);
        let x_space = env_pts.iter().map(|(r, v)| (1.0 + r).powf(kf) * v).fold(0.0, f64::max);
        let x_time = sup_series
            .iter()
            .map(|(t, v)| (1.0 + t).powf(kf / 2.0) * v)
            .fold(0.0, f64::max);
        let c0 = x_space.max(x_time) / a_weighted.max(a.sup_norm());

        let sup_name = format!("lemma1_m{m}_sup");
        let env_name = format!("lemma1_m{m}_envelope");
        bundle.series.push(NamedSeries {
            name: sup_name.clone(),
            axis: Axis::Time,
            points: sup_series,
        });
        bundle.series.push(NamedSeries {
            name: env_name.clone(),
            axis: Axis::Radius,
            points: env_pts,
        });
        t_names.push(sup_name);
        s_names.push(env_name);
        t_exps.push(tname);
        s_exps.push(sname);
        per_order.push(json!({
            "m": m,
            "datum": cert,
            "c0_estimate": c0,
            "free_space_support": free.support_len(),
            "path_agreement": agreement,
        }));
    }

    // Without vanishing moments the leading heat-kernel term survives.
    let prof = l.profile;
    let zeta = GridField::from_fn(grid, 1, |x, out| out[0] = prof.value(x.iter().map(|v| v * v).sum()));
    let zhat = zeta.spectrum().to_vec();
    let plain: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| {
            let u = heat_at(&grid, &zhat, t);
            let s = (0..grid.len())
                .filter(|&p| geo.radius[p] <= inner)
                .map(|p| u[0][p].abs())
                .fold(0.0, f64::max);
            (t, s)
        })
        .collect();
    let pfit = temporal_fit(&plain, l.temporal_window)?;
    bundle.exponents.push(Exponent::from_fit(
        "lemma1_no_cancellation_temporal",
        &pfit,
        -(n as f64) / 2.0,
        l.temporal_tolerance,
        Relation::Within,
    ));
    bundle.series.push(NamedSeries {
        name: "lemma1_no_cancellation_sup".into(),
        axis: Axis::Time,
        points: plain,
    });
    t_names.push("lemma1_no_cancellation_sup".into());
    t_exps.push("lemma1_no_cancellation_temporal".into());

    bundle
        .plots
        .push(plot("lemma1_temporal", "sup |e^{tΔ}a| against t", &t_names, &t_exps));
    bundle
        .plots
        .push(plot("lemma1_spatial", "sup_t |e^{tΔ}a| against |x|", &s_names, &s_exps));
    bundle.data = json!({ "orders": per_order, "ray_points": rays.len() });
    Ok(bundle)
}

/// `∇^⊥ exp(-|x-c|²/(2σ²))`
pub fn vortex(grid: &Grid, centre: &[f64], sigma: f64) -> GridField {
    let s2 = sigma * sigma;
    GridField::from_fn(*grid, 2, |x, out| {
        let (dx, dy) = (x[0] - centre[0], x[1] - centre[1]);
        let z = (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
        out[0] = dy / s2 * z;
        out[1] = -dx / s2 * z;
    })
}

pub fn run_lemma2_check(config: &ExperimentConfig) -> Result<ReportBundle> {
    let l = &config.lemma2;
    let n = 2;
    let grid = Grid::new(n, l.size, l.half_width)?;
    let mut bundle = ReportBundle::new(config);
    let reach = |c: &[f64]| 8.6 * l.sigma + c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let lim = l.half_width / 4.0;
    if reach(&l.centre_u) > lim || reach(&l.centre_v) > lim {
        return Err(Error::SupportTooLarge(format!("test pair reaches beyond L/4 = {lim}")));
    }
    let u = vortex(&grid, &l.centre_u, l.sigma);
    let v = vortex(&grid, &l.centre_v, l.sigma);
    let top = l.orders.iter().copied().max().unwrap_or(0) + 1;
    let fam = build_chi_family(&[l.control_box; 2], top)?;
    let sampled = fam.sample(&grid)?;
    let pair = StationaryPair { u, v };
    let opts = SpatialFitOptions {
        max_radius_fraction: 0.25,
        bins: Some(l.tail_bins),
    };
    let mut slopes: Vec<(usize, f64)> = Vec::new();
    let mut names = Vec::new();
    let mut exps = Vec::new();
    let mut details = Vec::new();
    for &m in &l.orders {
        let kf = (n + 1 + m) as f64;
        let (b, rep) = duhamel_bilinear(&pair, Some(&sampled), m, l.time, l.dealias, &l.duhamel)?;
        let mag = b.magnitude();
        let fit = spatial_fit(&grid, &mag, l.tail_window, opts)?;
        let name = format!("lemma2_m{m}_tail");
        bundle
            .exponents
            .push(Exponent::from_fit(&name, &fit, -kf, l.tolerance, Relation::Within));
        slopes.push((m, fit.slope));
        let (b1, _) = duhamel_bilinear(&pair, Some(&sampled), m + 1, l.time, l.dealias, &l.duhamel)?;
        let fit1 = spatial_fit(&grid, &b1.magnitude(), l.tail_window, opts)?;
        // r^{n+1+m} |B̃_{m+1}| decreasing over the outer window.
        bundle.checks.push(Check::new(
            format!("lemma2_m{m}_extra_decay"),
            fit1.slope + kf,
            0.0,
            0.0,
            Relation::AtMost,
        ));
        let sname = format!("lemma2_m{m}_radial");
        bundle.series.push(NamedSeries {
            name: sname.clone(),
            axis: Axis::Radius,
            points: shell_maxima(&grid, &mag, (2.0 * grid.spacing(), l.half_width / 4.0), 48),
        });
        names.push(sname);
        exps.push(name);
        details.push(json!({
            "m": m,
            "duhamel": rep,
            "sup": b.sup_norm(),
            "next_order_slope": fit1.slope,
        }));
    }
    slopes.sort_by_key(|s| s.0);
    for w in slopes.windows(2) {
        if w[1].0 == w[0].0 + 1 {
            bundle.checks.push(Check::new(
                format!("lemma2_step_m{}_to_m{}", w[0].0, w[1].0),
                w[0].1 - w[1].1,
                1.0,
                0.5,
                Relation::Within,
            ));
        }
    }
    bundle
        .plots
        .push(plot("lemma2_tails", "|B̃_m(u,v)(·,t)| against |x|", &names, &exps));
    bundle.data = json!({ "orders": details, "family_raw_defect": sampled.raw_defect });
    Ok(bundle)
}

fn solver_config(s: &super::config::SimulateConfig, m: usize) -> SolverConfig {
    SolverConfig {
        m,
        horizon: s.horizon,
        time_grid: s.time_grid.clone(),
        picard: s.picard,
        duhamel: DuhamelSettings::default(),
        timestep: s.timestep,
        dealias: s.dealias,
        nonlinear_scale: 1.0,
        retain_nodes: false,
    }
}

/// Spatial, temporal and (for `m > 0`) force exponents of a trajectory.
fn trajectory_exponents(prefix: &str, traj: &Trajectory, s: &super::config::SimulateConfig) -> Result<Vec<Exponent>> {
    let n = s.dim;
    let m = traj.m;
    let kf = (n + 1 + m) as f64;
    let grid = traj.grid;
    let sfit = spatial_fit(&grid, &traj.envelope, s.spatial_window, SpatialFitOptions::default())?;
    let tfit = temporal_fit(&traj.sup_series, s.temporal_window)?;
    let mut out = vec![
        Exponent::from_fit(
            format!("{prefix}_spatial"),
            &sfit,
            -kf,
            s.temporal_tolerance,
            Relation::AtMost,
        ),
        Exponent::from_fit(
            format!("{prefix}_temporal"),
            &tfit,
            -kf / 2.0,
            s.temporal_tolerance,
            Relation::AtMost,
        ),
    ];
    if m > 0 {
        let ffit = temporal_fit(&traj.force.sup_series(), s.force_window)?;
        out.push(Exponent::from_fit(
            format!("{prefix}_force"),
            &ffit,
            force_target_slope(n, m),
            s.force_tolerance,
            Relation::Within,
        ));
    }
    Ok(out)
}

fn trajectory_checks(prefix: &str, traj: &Trajectory, s: &super::config::SimulateConfig) -> Result<Vec<Check>> {
    let tol = s.picard.tolerance;
    let mut out = vec![
        Check::new(
            format!("{prefix}_final_increment"),
            traj.increments.last().copied().unwrap_or(0.0),
            0.0,
            tol,
            Relation::AtMost,
        ),
        Check::new(
            format!("{prefix}_divergence"),
            traj.max_divergence_ratio()?,
            0.0,
            1e-9,
            Relation::AtMost,
        ),
    ];
    if let Some(r) = &traj.residual {
        out.push(Check::new(
            format!("{prefix}_residual"),
            r.max_weighted(),
            0.0,
            10.0 * tol,
            Relation::AtMost,
        ));
    }
    if traj.m == 0 {
        let f = traj.force.sup_series().iter().map(|p| p.1).fold(0.0, f64::max);
        out.push(Check::new(
            format!("{prefix}_force_zero"),
            f,
            0.0,
            0.0,
            Relation::AtMost,
        ));
    }
    Ok(out)
}

pub fn run_simulation(config: &ExperimentConfig) -> Result<ReportBundle> {
    let s = &config.simulate;
    let grid = Grid::new(s.dim, s.size, s.half_width)?;
    let mut bundle = ReportBundle::new(config);
    let (u0, cert) = make_initial_datum(&grid, &s.datum, s.m)?;
    let family = if s.m > 0 {
        Some(build_chi_family(&vec![s.control_box; s.dim], s.m)?.sample(&grid)?)
    } else {
        None
    };
    bundle.degenerate = u0.sup_norm() == 0.0;
    let mut runs: Vec<(&str, Trajectory)> = Vec::new();
    let controlled = picard_solve(&u0, family.as_ref(), &solver_config(s, s.m))?;
    log::info!("controlled run: {} iterations", controlled.iterations);
    runs.push(("controlled", controlled));
    if s.baseline && s.m > 0 {
        let base = picard_solve(&u0, None, &solver_config(s, 0))?;
        log::info!("baseline run: {} iterations", base.iterations);
        runs.push(("baseline", base));
    }
    let mut cross = serde_json::Value::Null;
    if s.cross_check {
        let ts = timestep_solve(&u0, family.as_ref(), &solver_config(s, s.m))?;
        let pic = &runs[0].1;
        let mut dev: f64 = 0.0;
        for (a, b) in pic.snapshots.iter().zip(&ts.snapshots) {
            let scale = a.max_abs();
            if scale > 0.0 {
                dev = dev.max(a.axpy(-1.0, b)?.max_abs() / scale);
            }
        }
        bundle
            .checks
            .push(Check::new("timestep_deviation", dev, 0.0, 1e-5, Relation::AtMost));
        cross = json!({ "deviation": dev, "steps": ts.nodes.len() });
    }

    let mut details = Vec::new();
    for (name, traj) in &runs {
        bundle.checks.extend(trajectory_checks(name, traj, s)?);
        let exps = if bundle.degenerate {
            Vec::new()
        } else {
            trajectory_exponents(name, traj, s)?
        };
        if config.simulate.write_trajectories {
            write_trajectory(&config.output_dir.join(name), traj, &exps, Some(config.seed))?;
        }
        bundle.exponents.extend(exps);
        let env = shell_maxima(&grid, &traj.envelope, (2.0 * grid.spacing(), s.half_width / 4.0), 48);
        bundle.series.push(NamedSeries {
            name: format!("{name}_envelope"),
            axis: Axis::Radius,
            points: env,
        });
        bundle.series.push(NamedSeries {
            name: format!("{name}_sup"),
            axis: Axis::Time,
            points: traj.sup_series.clone(),
        });
        if traj.m > 0 {
            bundle.series.push(NamedSeries {
                name: format!("{name}_force_sup"),
                axis: Axis::Time,
                points: traj.force.sup_series(),
            });
        }
        details.push(json!({
            "run": name,
            "m": traj.m,
            "iterations": traj.iterations,
            "converged": traj.converged,
            "increments": traj.increments,
            "ratios": traj.ratios,
            "x_norm": traj.x_norm,
            "residual": traj.residual,
            "nodes": traj.nodes.len(),
            "force_support": traj.force.support().len(),
        }));
    }
    if bundle.degenerate {
        bundle
            .notes
            .push("zero initial datum: trajectory and force vanish, no fits".into());
    } else if runs.len() == 2 {
        let c = bundle.exponent("controlled_spatial").map(|e| e.slope);
        let b = bundle.exponent("baseline_spatial").map(|e| e.slope);
        if let (Some(c), Some(b)) = (c, b) {
            bundle.checks.push(Check::new(
                "spatial_steepening",
                b - c,
                s.steepening,
                0.0,
                Relation::AtLeast,
            ));
        }
    }
    let run_names: Vec<String> = runs.iter().map(|r| r.0.to_string()).collect();
    let series = |suffix: &str| -> Vec<String> { run_names.iter().map(|r| format!("{r}_{suffix}")).collect() };
    let exps = |suffix: &str| -> Vec<String> {
        run_names
            .iter()
            .map(|r| format!("{r}_{suffix}"))
            .filter(|n| bundle.exponent(n).is_some())
            .collect()
    };
    let plots = vec![
        plot(
            "simulate_spatial",
            "sup_t |u| against |x|",
            &series("envelope"),
            &exps("spatial"),
        ),
        plot(
            "simulate_temporal",
            "sup_x |u| against t",
            &series("sup"),
            &exps("temporal"),
        ),
        plot(
            "simulate_force",
            "sup_x |f| against t",
            &["controlled_force_sup".into()],
            &exps("force"),
        ),
    ];
    bundle.plots = plots;
    bundle.data = json!({ "datum": cert, "runs": details, "cross_check": cross });
    Ok(bundle)
}
