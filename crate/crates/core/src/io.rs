//! Snapshot and trajectory persistence.
//!
//! A snapshot holds the spectral coefficients of one or more components:
//! magic `HYDROLIM1`, then `nx`, `ny`, `nz` and the component count as
//! little-endian `u32`, then per component the complex coefficients as
//! interleaved little-endian `f64` pairs in row-major mode order. A
//! trajectory is a JSON manifest naming per-sample field and tendency
//! snapshots.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;

use crate::dynamics::Trajectory;
use crate::fields::VelocityField;
use crate::grid::{build_grid, same_grid, GridSpec, SpectralGrid};
use crate::spectral::{Parity, ScalarField};
use crate::{Error, Result};

const MAGIC: &[u8; 9] = b"HYDROLIM1";

/// Velocity component parity layout: two even horizontal parts, odd w.
const PARITIES: [Parity; 3] = [Parity::Even, Parity::Even, Parity::Odd];

pub fn write_snapshot(path: &Path, components: &[&ScalarField]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    let [nx, ny, nz] = components
        .first()
        .map(|f| f.grid().shape())
        .ok_or_else(|| Error::Config("snapshot needs at least one component".into()))?;
    for d in [nx, ny, nz, components.len()] {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for f in components {
        for c in f.coeffs().iter() {
            out.write_all(&c.re.to_le_bytes())?;
            out.write_all(&c.im.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_velocity(path: &Path, u: &VelocityField) -> Result<()> {
    write_snapshot(path, &u.components())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Corrupt(format!("truncated {what}")))?;
    Ok(u32::from_le_bytes(buf))
}

/// Read a snapshot's components onto the given grid, tagging parities in
/// component order (cycling the velocity layout).
pub fn read_snapshot(path: &Path, grid: &Arc<SpectralGrid>) -> Result<Vec<ScalarField>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(|_| Error::Corrupt("missing header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = read_u32(&mut r, "dims")? as usize;
    }
    if dims != grid.shape() {
        return Err(Error::GridMismatch);
    }
    let count = read_u32(&mut r, "component count")? as usize;
    let mut fields = Vec::with_capacity(count);
    let mut buf = [0u8; 16];
    for c in 0..count {
        let mut coeffs = ndarray::Array3::<Complex64>::zeros(dims);
        for v in coeffs.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Corrupt(format!("truncated component {c}")))?;
            *v = Complex64::new(
                f64::from_le_bytes(buf[..8].try_into().unwrap()),
                f64::from_le_bytes(buf[8..].try_into().unwrap()),
            );
        }
        fields.push(ScalarField::from_coeffs(grid.clone(), PARITIES[c % 3], coeffs)?);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::Corrupt("trailing bytes after last component".into()));
    }
    Ok(fields)
}

pub fn read_velocity(path: &Path, grid: &Arc<SpectralGrid>) -> Result<VelocityField> {
    let mut fields = read_snapshot(path, grid)?;
    if fields.len() != 3 {
        return Err(Error::Corrupt(format!("expected 3 components, found {}", fields.len())));
    }
    let w = fields.pop().unwrap();
    let v2 = fields.pop().unwrap();
    let v1 = fields.pop().unwrap();
    Ok(VelocityField::new(v1, v2, w))
}

/// Manifest naming every sample of a stored trajectory; paths are
/// relative to the manifest's directory.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryManifest {
    pub grid: GridSpec,
    pub eps: f64,
    pub times: Vec<f64>,
    pub fields: Vec<String>,
    pub tendencies: Vec<String>,
}

/// Write the trajectory as one snapshot pair per sample plus a manifest
/// `<stem>.manifest.json`; returns the manifest path.
pub fn save_trajectory(dir: &Path, stem: &str, traj: &Trajectory) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = TrajectoryManifest {
        grid: traj.grid().spec(),
        eps: traj.eps(),
        times: traj.times().to_vec(),
        fields: Vec::new(),
        tendencies: Vec::new(),
    };
    for (k, (u, du)) in traj.fields().iter().zip(traj.tendencies()).enumerate() {
        let f = format!("{stem}_{k:05}.snap");
        let d = format!("{stem}_{k:05}.tend");
        write_velocity(&dir.join(&f), u)?;
        write_velocity(&dir.join(&d), du)?;
        manifest.fields.push(f);
        manifest.tendencies.push(d);
    }
    let path = dir.join(format!("{stem}.manifest.json"));
    let mut out = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(path)
}

pub fn load_trajectory(manifest_path: &Path) -> Result<Trajectory> {
    let manifest: TrajectoryManifest =
        serde_json::from_reader(BufReader::new(File::open(manifest_path)?))?;
    if manifest.fields.len() != manifest.times.len()
        || manifest.tendencies.len() != manifest.times.len()
    {
        return Err(Error::Corrupt("manifest sample lists disagree in length".into()));
    }
    let grid = build_grid(manifest.grid)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut fields = Vec::with_capacity(manifest.fields.len());
    let mut tendencies = Vec::with_capacity(manifest.tendencies.len());
    for name in &manifest.fields {
        fields.push(read_velocity(&dir.join(name), &grid)?);
    }
    for name in &manifest.tendencies {
        tendencies.push(read_velocity(&dir.join(name), &grid)?);
    }
    for u in fields.iter().chain(&tendencies) {
        if !same_grid(u.grid(), &grid) {
            return Err(Error::GridMismatch);
        }
    }
    Trajectory::from_parts(manifest.times, fields, tendencies, manifest.eps)
}
