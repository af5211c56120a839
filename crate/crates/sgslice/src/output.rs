//! On-disk formats: snapshots and diagnostics as comma-separated tables in
//! full round-trip precision, convergence reports as structured text.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{DiagnosticsRow, ParticleState, RhsSample};
use crate::error::SgError;
use crate::metrics::ConvergenceReport;
use crate::Result;

/// One particle in one snapshot: state, dual weight, and cell moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub step: usize,
    pub t: f64,
    pub particle_index: usize,
    pub z1: f64,
    pub z2: f64,
    pub m: f64,
    pub w: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "E_I")]
    pub e_i: f64,
}

/// Flattens a solved state and its cell moments into per-particle records,
/// sorted by particle index.
pub fn snapshot_records(state: &ParticleState, sample: &RhsSample) -> Result<Vec<SnapshotRecord>> {
    let n = state.len();
    if state.weights.len() != n {
        return Err(SgError::StaleState(format!(
            "snapshot needs a solved state: {} particles but {} weights",
            n,
            state.weights.len()
        )));
    }
    if sample.e_i.len() != n || sample.centroids.len() != n {
        return Err(SgError::StaleState(format!(
            "snapshot moments cover {} cells but the state has {} particles",
            sample.e_i.len(),
            n
        )));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let rec = SnapshotRecord {
            step: state.step,
            t: state.t,
            particle_index: i,
            z1: state.seeds[i].z1,
            z2: state.seeds[i].z2,
            m: state.masses[i],
            w: state.weights[i],
            c1: sample.centroids[i].x,
            c2: sample.centroids[i].y,
            e_i: sample.e_i[i],
        };
        for (name, v) in [
            ("t", rec.t),
            ("z1", rec.z1),
            ("z2", rec.z2),
            ("m", rec.m),
            ("w", rec.w),
            ("C1", rec.c1),
            ("C2", rec.c2),
            ("E_I", rec.e_i),
        ] {
            if !v.is_finite() {
                return Err(SgError::Numerics(format!(
                    "snapshot field {name} of particle {i} is not finite ({v})"
                )));
            }
        }
        records.push(rec);
    }
    Ok(records)
}

fn csv_write<T: Serialize>(rows: &[T], header: &[&str], path: &Path) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if rows.is_empty() {
        writer.write_record(header).map_err(|e| csv_error(path, e))?;
    }
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| SgError::io(path.display().to_string(), e))
}

fn csv_read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> SgError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SgError::io(path.display().to_string(), io),
        other => SgError::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Writes one snapshot table; columns step, t, particle_index, z1, z2, m,
/// w, C1, C2, E_I in shortest round-trip precision.
pub fn write_snapshot(state: &ParticleState, sample: &RhsSample, path: impl AsRef<Path>) -> Result<()> {
    let records = snapshot_records(state, sample)?;
    csv_write(
        &records,
        &["step", "t", "particle_index", "z1", "z2", "m", "w", "C1", "C2", "E_I"],
        path.as_ref(),
    )
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Vec<SnapshotRecord>> {
    csv_read(path.as_ref())
}

/// Writes the conservation time series; an empty run still gets its header.
pub fn write_diagnostics(rows: &[DiagnosticsRow], path: impl AsRef<Path>) -> Result<()> {
    csv_write(
        rows,
        &["t", "total_mass", "energy", "energy_rel_err", "min_mass", "newton_iters"],
        path.as_ref(),
    )
}

pub fn read_diagnostics(path: impl AsRef<Path>) -> Result<Vec<DiagnosticsRow>> {
    csv_read(path.as_ref())
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    mode: &'a str,
    abscissae: &'a [f64],
    errors: &'a [f64],
    slope: f64,
    fit_residual: f64,
    below_noise_floor: bool,
    /// Entropic regularisation the particle comparisons ran at.
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    /// √(ε·ln n): the resolution limit the entropic distances carry.
    #[serde(skip_serializing_if = "Option::is_none")]
    entropic_bias_floor: Option<f64>,
}

/// Writes a convergence report as structured text; particle studies carry
/// the entropic bias floor alongside the fitted slope.
pub fn write_report(
    report: &ConvergenceReport,
    bias_floor: Option<f64>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mode = match report.mode {
        crate::metrics::StudyMode::Timestep => "timestep",
        crate::metrics::StudyMode::Particles => "particles",
    };
    let doc = ReportDoc {
        mode,
        abscissae: &report.abscissae,
        errors: &report.errors,
        slope: report.slope,
        fit_residual: report.fit_residual,
        below_noise_floor: report.below_noise_floor,
        epsilon: report.epsilon,
        entropic_bias_floor: bias_floor,
    };
    let text = toml::to_string_pretty(&doc)
        .map_err(|e| SgError::Config(format!("serializing report: {e}")))?;
    fs::write(path, text).map_err(|e| SgError::io(path.display().to_string(), e))
}
