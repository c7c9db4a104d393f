//! On-disk formats: binary field snapshots with JSON manifests, CSV tables,
//! profile-family exports, the kernel profile cache and trajectory
//! directories.
//!
//! Snapshot layout (all little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `DLSNAP\0\0` |
//! | 4 | format version (`u32`) |
//! | 4 | dimension `n` (`u32`) |
//! | 4 | component count (`u32`) |
//! | 8·n | points per axis (`u64`) |
//! | 8 | half-width `L` (`f64`) |
//! | 8 | time (`f64`) |
//! | rest | `f64` values, component-major, C order within a component |

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::MomentSignal;
use crate::error::{Error, Result};
use crate::field::GridField;
use crate::fit::Exponent;
use crate::grid::Grid;
use crate::kernels::{OseenProfile, SYMBOL_VERSION};
use crate::profiles::{ControlProfileFamily, SampledFamily};
use crate::solver::{ResidualReport, SolveMethod, Trajectory};

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"DLSNAP\0\0";
pub const SNAPSHOT_VERSION: u32 = 1;

/// JSON sidecar describing a snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub format: String,
    pub version: u32,
    pub file: String,
    pub dim: usize,
    pub components: usize,
    pub dims: Vec<usize>,
    pub half_width: f64,
    pub time: f64,
    pub byte_order: String,
    pub layout: String,
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes `path` and its manifest `path` with extension `.json`.
pub fn write_snapshot(path: &Path, field: &GridField, time: f64) -> Result<SnapshotManifest> {
    write_raw_snapshot(path, field.grid(), field.data(), time)
}

fn write_raw_snapshot(path: &Path, grid: &Grid, data: &[Vec<f64>], time: f64) -> Result<SnapshotManifest> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&SNAPSHOT_MAGIC)?;
    put(&SNAPSHOT_VERSION.to_le_bytes())?;
    put(&(grid.dim() as u32).to_le_bytes())?;
    put(&(data.len() as u32).to_le_bytes())?;
    for _ in 0..grid.dim() {
        put(&(grid.size() as u64).to_le_bytes())?;
    }
    put(&grid.half_width().to_le_bytes())?;
    put(&time.to_le_bytes())?;
    for comp in data {
        let mut buf = Vec::with_capacity(comp.len() * 8);
        for v in comp {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let manifest = SnapshotManifest {
        format: "decaylab-snapshot".into(),
        version: SNAPSHOT_VERSION,
        file: file_name(path),
        dim: grid.dim(),
        components: data.len(),
        dims: vec![grid.size(); grid.dim()],
        half_width: grid.half_width(),
        time,
        byte_order: "little".into(),
        layout: "component-major, C order".into(),
    };
    write_json(&path.with_extension("json"), &manifest)?;
    Ok(manifest)
}

/// Reads a snapshot, returning the field and its time.
pub fn read_snapshot(path: &Path) -> Result<(GridField, f64)> {
    let (grid, data, time) = read_raw_snapshot(path)?;
    Ok((GridField::new(grid, data)?, time))
}

fn read_raw_snapshot(path: &Path) -> Result<(Grid, Vec<Vec<f64>>, f64)> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |k: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + k).ok_or_else(|| bad("truncated header"))?;
        pos += k;
        Ok(s)
    };
    if take(8)? != SNAPSHOT_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != SNAPSHOT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = u32_at(take(4)?) as usize;
    let comps = u32_at(take(4)?) as usize;
    if !(1..=3).contains(&dim) {
        return Err(bad(&format!("dimension {dim}")));
    }
    let mut dims = Vec::with_capacity(dim);
    for _ in 0..dim {
        dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
    }
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(bad("non-cubic grids are not supported"));
    }
    let half_width = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let time = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let grid = Grid::new(dim, dims[0], half_width).map_err(|e| bad(&e.to_string()))?;
    let body = &bytes[pos..];
    if body.len() != comps * grid.len() * 8 {
        return Err(bad(&format!(
            "payload has {} bytes, expected {}",
            body.len(),
            comps * grid.len() * 8
        )));
    }
    let data = body
        .chunks_exact(grid.len() * 8)
        .map(|c| {
            c.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((grid, data, time))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const SIGNAL_HEADER: &str = "time,alpha,i,j,value";
pub const FIT_HEADER: &str =
    "name,kind,slope,intercept,window_lo,window_hi,r_squared,residual,target,tolerance,relation,pass";
pub const RADIAL_HEADER: &str = "series,r,value";

/// One row per `(t, α, i, j)`; `α` as a dash-joined label, `i, j` 0-based.
pub fn signal_csv(signal: &MomentSignal) -> String {
    let n = signal.dim;
    let mut out = String::from(SIGNAL_HEADER);
    out.push('\n');
    for (t, slice) in signal.times.iter().zip(&signal.values) {
        for (alpha, entries) in signal.indices.iter().zip(slice) {
            for (c, v) in entries.iter().enumerate() {
                out.push_str(&format!("{t:e},{},{},{},{v:e}\n", alpha.label(), c / n, c % n));
            }
        }
    }
    out
}

pub fn write_signal_csv(path: &Path, signal: &MomentSignal) -> Result<()> {
    write_text(path, &signal_csv(signal))
}

pub fn fits_csv(fits: &[Exponent]) -> String {
    let mut out = String::from(FIT_HEADER);
    out.push('\n');
    for f in fits {
        let kind = serde_json::to_value(f.kind)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        let rel = serde_json::to_value(f.relation)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{kind},{},{},{},{},{},{},{},{},{rel},{}\n",
            f.name,
            f.slope,
            f.intercept,
            f.window.0,
            f.window.1,
            f.r_squared,
            f.residual,
            f.target,
            f.tolerance,
            f.pass
        ));
    }
    out
}

pub fn write_fits_csv(path: &Path, fits: &[Exponent]) -> Result<()> {
    write_text(path, &fits_csv(fits))
}

/// Long-format radial profiles: one row per `(series, r, value)`.
pub fn radial_csv(series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::from(RADIAL_HEADER);
    out.push('\n');
    for (name, pts) in series {
        for (r, v) in pts {
            out.push_str(&format!("{name},{r:e},{v:e}\n"));
        }
    }
    out
}

pub fn write_radial_csv(path: &Path, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    write_text(path, &radial_csv(series))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyManifest {
    pub dim: usize,
    pub order: usize,
    pub boxes: Vec<(f64, f64)>,
    pub grid_size: usize,
    pub half_width: f64,
    pub indices: Vec<String>,
    pub files: Vec<String>,
    pub certificate_max_error: f64,
    pub raw_defect: f64,
}

/// Writes `family.json` and one dense snapshot `chi_<α>.bin` per profile.
pub fn export_family(dir: &Path, family: &ControlProfileFamily, sampled: &SampledFamily) -> Result<FamilyManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for (k, alpha) in sampled.indices.iter().enumerate() {
        let name = format!("chi_{}.bin", alpha.label());
        write_raw_snapshot(&dir.join(&name), &sampled.grid, &[sampled.dense(k)], 0.0)?;
        files.push(name);
    }
    let manifest = FamilyManifest {
        dim: family.dim,
        order: family.order,
        boxes: family.boxes(),
        grid_size: sampled.grid.size(),
        half_width: sampled.grid.half_width(),
        indices: sampled.indices.iter().map(|a| a.label()).collect(),
        files,
        certificate_max_error: family.certificate.max_error,
        raw_defect: sampled.raw_defect,
    };
    write_json(&dir.join("family.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCacheManifest {
    pub symbol_version: u32,
    pub dim: usize,
    pub size: usize,
    pub half_width: f64,
    pub l1_norm: f64,
    pub file: String,
}

fn kernel_file(dim: usize) -> String {
    format!("oseen_profile_{dim}d.bin")
}

pub fn save_kernel_profile(dir: &Path, profile: &OseenProfile) -> Result<KernelCacheManifest> {
    let file = kernel_file(profile.dim());
    let path = dir.join(&file);
    write_raw_snapshot(&path, profile.grid(), profile.stored(), 1.0)?;
    let manifest = KernelCacheManifest {
        symbol_version: profile.symbol_version,
        dim: profile.dim(),
        size: profile.grid().size(),
        half_width: profile.grid().half_width(),
        l1_norm: profile.l1_norm,
        file,
    };
    write_json(&path.with_extension("json"), &manifest)?;
    Ok(manifest)
}

/// Loads a cached profile for dimension `dim` and the given grid, or
/// `None` when missing, built on another grid, or from a stale symbol
/// version.
pub fn load_kernel_profile(dir: &Path, dim: usize, size: usize, half_width: f64) -> Result<Option<OseenProfile>> {
    let path = dir.join(kernel_file(dim));
    let mpath = path.with_extension("json");
    if !path.exists() || !mpath.exists() {
        return Ok(None);
    }
    let manifest: KernelCacheManifest = match read_json(&mpath) {
        Ok(m) => m,
        Err(Error::Format { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if manifest.symbol_version != SYMBOL_VERSION
        || manifest.dim != dim
        || manifest.size != size
        || manifest.half_width != half_width
    {
        log::info!("kernel cache at {} is stale, rebuilding", path.display());
        return Ok(None);
    }
    let (grid, data, _) = read_raw_snapshot(&path)?;
    Ok(Some(OseenProfile::from_parts(grid, data, manifest.symbol_version)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub method: SolveMethod,
    pub dim: usize,
    pub grid_size: usize,
    pub half_width: f64,
    pub m: usize,
    pub node_count: usize,
    pub output_times: Vec<f64>,
    pub snapshots: Vec<String>,
    pub envelope: String,
    pub signals: String,
    pub fits: String,
    pub iterations: usize,
    pub converged: bool,
    pub increments: Vec<f64>,
    pub ratios: Vec<f64>,
    pub x_norm: f64,
    pub residual: Option<ResidualReport>,
    pub sup_series: Vec<(f64, f64)>,
    pub force_sup_series: Vec<(f64, f64)>,
    pub seed: Option<u64>,
}

/// `manifest.json`, `snapshots/u_XXXX.bin`, `envelope.bin`, `signals.csv`
/// and `fits.csv` under `dir`.
pub fn write_trajectory(
    dir: &Path,
    traj: &Trajectory,
    fits: &[Exponent],
    seed: Option<u64>,
) -> Result<TrajectoryManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut snaps = Vec::new();
    for (k, (t, s)) in traj.output_times.iter().zip(&traj.snapshots).enumerate() {
        let name = format!("snapshots/u_{k:04}.bin");
        write_snapshot(&dir.join(&name), s, *t)?;
        snaps.push(name);
    }
    write_raw_snapshot(
        &dir.join("envelope.bin"),
        &traj.grid,
        std::slice::from_ref(&traj.envelope),
        traj.nodes.last().copied().unwrap_or(0.0),
    )?;
    write_signal_csv(&dir.join("signals.csv"), traj.signal())?;
    write_fits_csv(&dir.join("fits.csv"), fits)?;
    let manifest = TrajectoryManifest {
        method: traj.method.clone(),
        dim: traj.grid.dim(),
        grid_size: traj.grid.size(),
        half_width: traj.grid.half_width(),
        m: traj.m,
        node_count: traj.nodes.len(),
        output_times: traj.output_times.clone(),
        snapshots: snaps,
        envelope: "envelope.bin".into(),
        signals: "signals.csv".into(),
        fits: "fits.csv".into(),
        iterations: traj.iterations,
        converged: traj.converged,
        increments: traj.increments.clone(),
        ratios: traj.ratios.clone(),
        x_norm: traj.x_norm,
        residual: traj.residual.clone(),
        sup_series: traj.sup_series.clone(),
        force_sup_series: traj.force.sup_series(),
        seed,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_trajectory_manifest(dir: &Path) -> Result<TrajectoryManifest> {
    read_json(&dir.join("manifest.json"))
}

/// Paths of the snapshots listed in a trajectory manifest.
pub fn snapshot_paths(dir: &Path, manifest: &TrajectoryManifest) -> Vec<PathBuf> {
    manifest.snapshots.iter().map(|s| dir.join(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multi_index::MultiIndex;

    #[test]
    fn snapshot_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(2, 8, 3.0).unwrap();
        let f = GridField::from_fn(g, 2, |x, o| {
            o[0] = x[0].sin() * 1e-300;
            o[1] = x[1] + 0.1;
        });
        let path = dir.path().join("a/b/u.bin");
        let man = write_snapshot(&path, &f, 2.5).unwrap();
        assert_eq!(man.dims, vec![8, 8]);
        let (back, t) = read_snapshot(&path).unwrap();
        assert_eq!(t, 2.5);
        assert_eq!(back, f);
        let m2: SnapshotManifest = read_json(&path.with_extension("json")).unwrap();
        assert_eq!(m2, man);
    }

    #[test]
    fn snapshot_header_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(1, 4, 1.0).unwrap();
        let f = GridField::new(g, vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let path = dir.path().join("s.bin");
        write_snapshot(&path, &f, 0.5).unwrap();
        let b = fs::read(&path).unwrap();
        assert_eq!(&b[..8], b"DLSNAP\0\0");
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..16], &[1, 0, 0, 0]);
        assert_eq!(&b[16..20], &[1, 0, 0, 0]);
        assert_eq!(&b[20..28], &4u64.to_le_bytes());
        assert_eq!(&b[28..36], &1.0f64.to_le_bytes());
        assert_eq!(&b[36..44], &0.5f64.to_le_bytes());
        assert_eq!(&b[44..52], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 44 + 32);
    }

    #[test]
    fn corrupted_snapshots_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(2, 4, 1.0).unwrap();
        let path = dir.path().join("s.bin");
        write_snapshot(&path, &GridField::zeros(g, 2), 0.0).unwrap();
        let mut b = fs::read(&path).unwrap();
        b.pop();
        fs::write(&path, &b).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Format { .. })));
        b[0] = b'X';
        fs::write(&path, &b).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Format { .. })));
        assert!(matches!(
            read_snapshot(&dir.path().join("none.bin")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn signal_csv_rows() {
        let mut s = MomentSignal::new(2, 1);
        s.push(0.5, vec![vec![1.0, 2.0, 2.0, 3.0]]).unwrap();
        let text = signal_csv(&s);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SIGNAL_HEADER);
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2], "5e-1,0-0,0,1,2e0");
        assert_eq!(s.indices[0], MultiIndex::zero(2));
    }
}
