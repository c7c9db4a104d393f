//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DatumProfile, DatumSpec};
use crate::profiles::BumpShape;
use crate::solver::{
    DuhamelSettings, OutputTimes, PicardSettings, SourceFilter, StepRule, TimeGridSpec, TimestepSettings,
};

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "DECAYLAB_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Profiles,
    Kernels,
    Lemma1,
    Lemma2,
    Simulate,
    Report,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Profiles => "profiles",
            ExperimentKind::Kernels => "kernels",
            ExperimentKind::Lemma1 => "lemma1",
            ExperimentKind::Lemma2 => "lemma2",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilesConfig {
    pub dim: usize,
    /// Certificates for every order `0..=max_order`.
    pub max_order: usize,
    /// Moment-matrix positivity for every order `0..=max_matrix_order`.
    pub max_matrix_order: usize,
    pub interval: (f64, f64),
    pub shape: BumpShape,
    pub tolerance: f64,
    /// Grid for the exported family; skipped when `export_size` is 0.
    pub export_size: usize,
    pub export_half_width: f64,
    pub export_order: usize,
    pub profile_samples: usize,
}

impl Default for ProfilesConfig {
    fn default() -> Self {
        ProfilesConfig {
            dim: 2,
            max_order: 6,
            max_matrix_order: 8,
            interval: (-2.0, 2.0),
            shape: BumpShape::Exponential,
            tolerance: 1e-8,
            export_size: 64,
            export_half_width: 8.0,
            export_order: 2,
            profile_samples: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelsConfig {
    pub dim: usize,
    /// Profile grid; `0` picks the default for the dimension.
    pub size: usize,
    pub half_width: f64,
    pub times: Vec<f64>,
    pub tail_window: Option<(f64, f64)>,
    /// Allowed relative spread of `‖F(·,t)‖₁ √t`.
    pub l1_tolerance: f64,
    pub tail_tolerance: f64,
    /// Reuse or populate a profile cache here; relative paths are taken
    /// against the output directory.
    pub cache_dir: Option<PathBuf>,
}

impl Default for KernelsConfig {
    fn default() -> Self {
        KernelsConfig {
            dim: 2,
            size: 0,
            half_width: 0.0,
            times: vec![0.25, 1.0, 4.0],
            tail_window: None,
            l1_tolerance: 5e-3,
            tail_tolerance: 0.15,
            cache_dir: Some(PathBuf::from("kernel_cache")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lemma1Config {
    pub size: usize,
    pub half_width: f64,
    pub orders: Vec<usize>,
    pub profile: DatumProfile,
    pub temporal_window: (f64, f64),
    pub temporal_samples: usize,
    pub spatial_window: (f64, f64),
    /// Geometric times `(first, last, count)` over which the spatial
    /// envelope `sup_t |e^{tΔ}a|` is taken.
    pub envelope_times: (f64, f64, usize),
    pub temporal_tolerance: f64,
    pub spatial_tolerance: f64,
}

impl Default for Lemma1Config {
    fn default() -> Self {
        Lemma1Config {
            size: 512,
            half_width: 128.0,
            orders: vec![0, 1, 2],
            profile: DatumProfile::Gaussian { sigma: 1.0 },
            temporal_window: (10.0, 100.0),
            temporal_samples: 40,
            spatial_window: (8.0, 64.0),
            envelope_times: (0.05, 2000.0, 160),
            temporal_tolerance: 0.2,
            spatial_tolerance: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lemma2Config {
    pub size: usize,
    pub half_width: f64,
    pub orders: Vec<usize>,
    pub time: f64,
    pub control_box: (f64, f64),
    pub sigma: f64,
    pub centre_u: Vec<f64>,
    pub centre_v: Vec<f64>,
    pub tail_window: (f64, f64),
    pub tail_bins: usize,
    pub tolerance: f64,
    pub dealias: bool,
    pub duhamel: DuhamelSettings,
}

impl Default for Lemma2Config {
    fn default() -> Self {
        Lemma2Config {
            size: 256,
            half_width: 64.0,
            orders: vec![0, 1, 2],
            time: 1.0,
            control_box: (-2.0, 2.0),
            sigma: 1.0,
            centre_u: vec![1.0, 0.5],
            centre_v: vec![-0.5, 1.0],
            tail_window: (8.0, 16.0),
            tail_bins: 32,
            tolerance: 0.3,
            dealias: false,
            duhamel: DuhamelSettings {
                source_filter: Some(SourceFilter {
                    order: 8,
                    strength: 36.0,
                }),
                ..DuhamelSettings::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub dim: usize,
    pub size: usize,
    pub half_width: f64,
    pub m: usize,
    /// Also run the `m = 0` dynamics from the same datum.
    pub baseline: bool,
    pub datum: DatumSpec,
    pub control_box: (f64, f64),
    pub horizon: f64,
    pub time_grid: TimeGridSpec,
    pub picard: PicardSettings,
    pub timestep: TimestepSettings,
    /// Run the time-stepper as well and report the deviation.
    pub cross_check: bool,
    pub dealias: bool,
    pub spatial_window: (f64, f64),
    pub temporal_window: (f64, f64),
    pub force_window: (f64, f64),
    /// Required `baseline slope - controlled slope`.
    pub steepening: f64,
    pub temporal_tolerance: f64,
    pub force_tolerance: f64,
    /// Write the trajectory directories.
    pub write_trajectories: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            dim: 2,
            size: 512,
            half_width: 128.0,
            m: 1,
            baseline: true,
            datum: DatumSpec {
                profile: DatumProfile::Gaussian { sigma: 1.0 },
                derivative_order: Some(1),
                amplitude: 10.0,
            },
            control_box: (-2.0, 2.0),
            horizon: 64.0,
            time_grid: TimeGridSpec {
                step: StepRule::Graded {
                    dt_min: 0.01,
                    fraction: 0.03,
                    dt_max: 10.0,
                },
                outputs: OutputTimes::Geometric { first: 0.5, count: 8 },
            },
            picard: PicardSettings::default(),
            timestep: TimestepSettings::default(),
            cross_check: false,
            dealias: true,
            spatial_window: (16.0, 32.0),
            temporal_window: (6.4, 64.0),
            force_window: (6.4, 64.0),
            steepening: 0.7,
            temporal_tolerance: 0.3,
            force_tolerance: 0.3,
            write_trajectories: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Directory holding a previous `results.json`.
    pub input_dir: PathBuf,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            input_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub plots: bool,
    #[serde(default)]
    pub profiles: ProfilesConfig,
    #[serde(default)]
    pub kernels: KernelsConfig,
    #[serde(default)]
    pub lemma1: Lemma1Config,
    #[serde(default)]
    pub lemma2: Lemma2Config,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn check_window(name: &str, w: (f64, f64)) -> Result<()> {
    if !(w.0 > 0.0 && w.1 > w.0 && w.1.is_finite()) {
        return Err(invalid(format!(
            "{name} window [{}, {}] must satisfy 0 < lo < hi",
            w.0, w.1
        )));
    }
    Ok(())
}

fn check_grid(name: &str, size: usize, half_width: f64) -> Result<()> {
    if size < 4 || !size.is_multiple_of(2) {
        return Err(invalid(format!("{name}: grid size {size} must be even and at least 4")));
    }
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(invalid(format!("{name}: half-width {half_width} must be positive")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            output_dir: default_output(),
            seed: 0,
            plots: true,
            profiles: ProfilesConfig::default(),
            kernels: KernelsConfig::default(),
            lemma1: Lemma1Config::default(),
            lemma2: Lemma2Config::default(),
            simulate: SimulateConfig::default(),
            report: ReportConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(e.to_string()))
    }

    /// Reads and validates a config file, then applies the output-directory
    /// environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env_override(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from));
        Ok(cfg)
    }

    pub fn apply_env_override(&mut self, value: Option<PathBuf>) {
        if let Some(dir) = value.filter(|d| !d.as_os_str().is_empty()) {
            self.output_dir = dir;
        }
    }

    /// Checks the section used by `kind`.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ExperimentKind::Profiles => {
                let p = &self.profiles;
                if !(1..=3).contains(&p.dim) {
                    return Err(invalid(format!("profiles: dimension {} not in 1..=3", p.dim)));
                }
                if !(p.interval.1 > p.interval.0) {
                    return Err(invalid("profiles: empty interval"));
                }
                if !(p.tolerance > 0.0) {
                    return Err(invalid("profiles: tolerance must be positive"));
                }
                if p.export_size > 0 {
                    check_grid("profiles export", p.export_size, p.export_half_width)?;
                }
                if p.profile_samples < 2 {
                    return Err(invalid("profiles: need at least two profile samples"));
                }
            }
            ExperimentKind::Kernels => {
                let k = &self.kernels;
                if !(2..=3).contains(&k.dim) {
                    return Err(invalid(format!("kernels: dimension {} must be 2 or 3", k.dim)));
                }
                if k.size > 0 {
                    check_grid("kernels", k.size, k.half_width)?;
                }
                if k.times.is_empty() || k.times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
                    return Err(invalid("kernels: times must be positive"));
                }
                if let Some(w) = k.tail_window {
                    check_window("kernels tail", w)?;
                }
                if !(k.l1_tolerance > 0.0 && k.tail_tolerance > 0.0) {
                    return Err(invalid("kernels: tolerances must be positive"));
                }
            }
            ExperimentKind::Lemma1 => {
                let l = &self.lemma1;
                check_grid("lemma1", l.size, l.half_width)?;
                check_window("lemma1 temporal", l.temporal_window)?;
                check_window("lemma1 spatial", l.spatial_window)?;
                let (a, b, c) = l.envelope_times;
                if !(a > 0.0 && b > a && c >= 2) {
                    return Err(invalid("lemma1: envelope times need 0 < first < last and count ≥ 2"));
                }
                if l.orders.is_empty() || l.temporal_samples < 8 {
                    return Err(invalid("lemma1: need orders and at least 8 temporal samples"));
                }
            }
            ExperimentKind::Lemma2 => {
                let l = &self.lemma2;
                check_grid("lemma2", l.size, l.half_width)?;
                check_window("lemma2 tail", l.tail_window)?;
                if !(l.time > 0.0) || !(l.sigma > 0.0) || l.orders.is_empty() {
                    return Err(invalid("lemma2: time, sigma and orders must be set"));
                }
                if l.centre_u.len() != 2 || l.centre_v.len() != 2 {
                    return Err(invalid("lemma2: centres must have two coordinates"));
                }
                if !(l.control_box.1 > l.control_box.0) {
                    return Err(invalid("lemma2: empty control box"));
                }
            }
            ExperimentKind::Simulate => {
                let s = &self.simulate;
                if !(2..=3).contains(&s.dim) {
                    return Err(invalid(format!("simulate: dimension {} must be 2 or 3", s.dim)));
                }
                check_grid("simulate", s.size, s.half_width)?;
                if !(s.horizon > 0.0 && s.horizon.is_finite()) {
                    return Err(invalid("simulate: horizon must be positive"));
                }
                if !(s.datum.amplitude >= 0.0 && s.datum.amplitude.is_finite()) {
                    return Err(invalid("simulate: amplitude must be finite and nonnegative"));
                }
                if !(s.control_box.1 > s.control_box.0) {
                    return Err(invalid("simulate: empty control box"));
                }
                check_window("simulate spatial", s.spatial_window)?;
                check_window("simulate temporal", s.temporal_window)?;
                check_window("simulate force", s.force_window)?;
                crate::solver::TimeGrid::build(s.horizon, &s.time_grid)
                    .map_err(|e| invalid(format!("simulate: {e}")))?;
            }
            ExperimentKind::Report => {
                if self.report.input_dir.as_os_str().is_empty() {
                    return Err(invalid("report: input_dir must be set"));
                }
            }
        }
        Ok(())
    }
}
