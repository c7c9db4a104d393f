//! Report bundles and their JSON, CSV and SVG emission.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use super::plot::{loglog_svg, Series};
use crate::error::{Error, Result};
use crate::fit::{Check, Exponent};
use crate::io::{fits_csv, read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Radius,
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSeries {
    pub name: String,
    pub axis: Axis,
    pub points: Vec<(f64, f64)>,
}

/// One emitted figure: named series plus the exponents overlaid on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub name: String,
    pub title: String,
    pub series: Vec<String>,
    pub exponents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub exponents: Vec<Exponent>,
    pub checks: Vec<Check>,
    pub series: Vec<NamedSeries>,
    pub plots: Vec<PlotSpec>,
    /// Experiment-specific details.
    pub data: serde_json::Value,
    /// Set when the run had nothing to measure (e.g. a zero datum).
    pub degenerate: bool,
    pub notes: Vec<String>,
}

impl ReportBundle {
    pub fn new(config: &ExperimentConfig) -> Self {
        ReportBundle {
            kind: config.kind,
            config: config.clone(),
            exponents: Vec::new(),
            checks: Vec::new(),
            series: Vec::new(),
            plots: Vec::new(),
            data: serde_json::Value::Null,
            degenerate: false,
            notes: Vec::new(),
        }
    }

    pub fn pass(&self) -> bool {
        self.exponents.iter().all(|e| e.pass) && self.checks.iter().all(|c| c.pass)
    }

    /// Human-readable lines for every failed exponent or check.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .exponents
            .iter()
            .filter(|e| !e.pass)
            .map(|e| {
                format!(
                    "{}: slope {:.4} vs target {:.4} ({:?}, tolerance {}) over [{}, {}]",
                    e.name, e.slope, e.target, e.relation, e.tolerance, e.window.0, e.window.1
                )
            })
            .collect();
        out.extend(self.checks.iter().filter(|c| !c.pass).map(|c| {
            format!(
                "{}: {:e} vs target {:e} ({:?}, tolerance {:e})",
                c.name, c.value, c.target, c.relation, c.tolerance
            )
        }));
        out
    }

    pub fn exponent(&self, name: &str) -> Option<&Exponent> {
        self.exponents.iter().find(|e| e.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn series_named(&self, name: &str) -> Option<&NamedSeries> {
        self.series.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportFormats {
    pub json: bool,
    pub csv: bool,
    pub plots: bool,
}

impl Default for ReportFormats {
    fn default() -> Self {
        ReportFormats {
            json: true,
            csv: true,
            plots: true,
        }
    }
}

pub const CHECK_HEADER: &str = "name,value,target,tolerance,relation,pass";

pub fn checks_csv(checks: &[Check]) -> String {
    let mut out = String::from(CHECK_HEADER);
    out.push('\n');
    for c in checks {
        let rel = serde_json::to_value(c.relation)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{rel},{}\n",
            c.name, c.value, c.target, c.tolerance, c.pass
        ));
    }
    out
}

fn series_csv(series: &[&NamedSeries], axis: &str) -> String {
    let mut out = format!("series,{axis},value\n");
    for s in series {
        for (x, v) in &s.points {
            out.push_str(&format!("{},{x:e},{v:e}\n", s.name));
        }
    }
    out
}

fn write(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    written.push(path.to_path_buf());
    Ok(())
}

/// Writes `results.json`, `fits.csv`, `checks.csv`, `radial.csv`,
/// `temporal.csv` and `plots/*.svg` under `dir`, creating it if needed.
pub fn emit_reports(bundle: &ReportBundle, dir: &Path, formats: ReportFormats) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if formats.json {
        let p = dir.join("results.json");
        write_json(&p, bundle)?;
        written.push(p);
    }
    if formats.csv {
        write(&dir.join("fits.csv"), &fits_csv(&bundle.exponents), &mut written)?;
        write(&dir.join("checks.csv"), &checks_csv(&bundle.checks), &mut written)?;
        let radial: Vec<&NamedSeries> = bundle.series.iter().filter(|s| s.axis == Axis::Radius).collect();
        let temporal: Vec<&NamedSeries> = bundle.series.iter().filter(|s| s.axis == Axis::Time).collect();
        write(&dir.join("radial.csv"), &series_csv(&radial, "r"), &mut written)?;
        write(&dir.join("temporal.csv"), &series_csv(&temporal, "t"), &mut written)?;
    }
    if formats.plots && !bundle.plots.is_empty() {
        let pdir = dir.join("plots");
        std::fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        for spec in &bundle.plots {
            let series: Vec<&NamedSeries> = spec.series.iter().filter_map(|n| bundle.series_named(n)).collect();
            let xlabel = match series.first().map(|s| s.axis) {
                Some(Axis::Time) => "t",
                _ => "|x|",
            };
            let curves: Vec<Series> = series
                .iter()
                .map(|s| Series {
                    name: &s.name,
                    points: &s.points,
                })
                .collect();
            let fits: Vec<&Exponent> = spec.exponents.iter().filter_map(|n| bundle.exponent(n)).collect();
            let svg = loglog_svg(&spec.title, xlabel, &curves, &fits);
            write(&pdir.join(format!("{}.svg", spec.name)), &svg, &mut written)?;
        }
    }
    Ok(written)
}

pub fn load_bundle(dir: &Path) -> Result<ReportBundle> {
    read_json(&dir.join("results.json"))
}
