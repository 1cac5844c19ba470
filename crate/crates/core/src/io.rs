//! CSV and JSON file formats.
//!
//! | file | header |
//! |------|--------|
//! | IMU stream | `t,ax,ay,az,gx,gy,gz` |
//! | trajectory | `t,x,y,psi` |
//! | motion deltas | `t,dd,dpsi` |
//! | speed | `t,speed,cadence` |
//!
//! Floats are written in shortest round-trip form.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::model::{validate_stream, ImuSample, MotionDelta, Pose2D, Trajectory};

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        drop(w);
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(Error::from)
}

pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut err = None;
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in rows {
            if let Err(e) = csv.serialize(r) {
                err = Some(e);
                return Err(std::io::Error::other("csv serialization failed"));
            }
        }
        csv.flush()
    })
    .map_err(|e| err.map(Error::from).unwrap_or(e))
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for r in rdr.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuRow {
    pub t: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub gx: f64,
    pub gy: f64,
    pub gz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaRow {
    pub t: f64,
    pub dd: f64,
    pub dpsi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedRow {
    pub t: f64,
    pub speed: f64,
    pub cadence: f64,
}

/// A position on the fine ground-truth grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

pub fn write_positions(path: &Path, rate: f64, positions: &[[f64; 2]]) -> Result<()> {
    let rows: Vec<PositionRow> = positions
        .iter()
        .enumerate()
        .map(|(j, p)| PositionRow {
            t: j as f64 / rate,
            x: p[0],
            y: p[1],
        })
        .collect();
    write_records(path, &rows)
}

pub fn read_positions(path: &Path) -> Result<Vec<[f64; 2]>> {
    let rows: Vec<PositionRow> = read_records(path)?;
    for r in &rows {
        ensure_finite("position row", &[r.t, r.x, r.y])?;
    }
    Ok(rows.iter().map(|r| [r.x, r.y]).collect())
}

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let rows: Vec<ImuRow> = samples
        .iter()
        .map(|s| ImuRow {
            t: s.t,
            ax: s.acc[0],
            ay: s.acc[1],
            az: s.acc[2],
            gx: s.gyro[0],
            gy: s.gyro[1],
            gz: s.gyro[2],
        })
        .collect();
    write_records(path, &rows)
}

/// Reads an IMU stream; rejects non-finite values and non-increasing stamps.
pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>> {
    let rows: Vec<ImuRow> = read_records(path)?;
    let samples: Vec<ImuSample> = rows
        .iter()
        .map(|r| ImuSample::new(r.t, [r.ax, r.ay, r.az], [r.gx, r.gy, r.gz]))
        .collect();
    validate_stream(&samples)?;
    Ok(samples)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let rows: Vec<PoseRow> = traj
        .stamps()
        .iter()
        .zip(traj.poses())
        .map(|(&t, p)| PoseRow {
            t,
            x: p.x,
            y: p.y,
            psi: p.psi,
        })
        .collect();
    write_records(path, &rows)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let rows: Vec<PoseRow> = read_records(path)?;
    for r in &rows {
        ensure_finite("trajectory row", &[r.t, r.x, r.y, r.psi])?;
    }
    Trajectory::new(
        rows.iter().map(|r| r.t).collect(),
        rows.iter().map(|r| Pose2D::new(r.x, r.y, r.psi)).collect(),
    )
}

pub fn write_deltas(path: &Path, stamps: &[f64], deltas: &[MotionDelta]) -> Result<()> {
    if stamps.len() != deltas.len() {
        return Err(Error::InvalidArgument(
            "stamps and deltas differ in length".into(),
        ));
    }
    let rows: Vec<DeltaRow> = stamps
        .iter()
        .zip(deltas)
        .map(|(&t, d)| DeltaRow {
            t,
            dd: d.dd,
            dpsi: d.dpsi,
        })
        .collect();
    write_records(path, &rows)
}

pub fn read_deltas(path: &Path) -> Result<(Vec<f64>, Vec<MotionDelta>)> {
    let rows: Vec<DeltaRow> = read_records(path)?;
    let deltas = rows
        .iter()
        .map(|r| MotionDelta::new(r.dd, r.dpsi))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Data(e.to_string()))?;
    Ok((rows.iter().map(|r| r.t).collect(), deltas))
}

/// Pretty-printed JSON through [`write_atomic`].
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
