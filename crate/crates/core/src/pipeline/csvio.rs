//! CSV readers and writers.
//!
//! * IMU: `t,gx,gy,gz,ax,ay,az` (s, rad/s, m/s²)
//! * magnetometer array: `t,m1x,m1y,m1z,…,mNx,mNy,mNz` (s, µT)
//! * trajectory: `t,x,y,z,qw,qx,qy,qz` (m, body-to-navigation quaternion),
//!   optionally followed by `vx,vy,vz`; further columns are ignored.
//!
//! Headers are mandatory and timestamps must strictly increase. Line numbers
//! in errors count the header as line 1.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::PipelineError;
use crate::magmodel::ArrayEpoch;
use crate::strapdown::{ImuSample, NavState};

pub const IMU_HEADER: [&str; 7] = ["t", "gx", "gy", "gz", "ax", "ay", "az"];
pub const TRAJECTORY_HEADER: [&str; 8] = ["t", "x", "y", "z", "qw", "qx", "qy", "qz"];
const VELOCITY_HEADER: [&str; 3] = ["vx", "vy", "vz"];
const BIAS_HEADER: [&str; 6] = ["bgx", "bgy", "bgz", "bax", "bay", "baz"];

/// Pose sample of an estimated or reference trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub r_n: Vector3<f64>,
    pub c_bn: Matrix3<f64>,
    pub v_n: Option<Vector3<f64>>,
}

impl From<&NavState> for TrajectoryPoint {
    fn from(s: &NavState) -> Self {
        Self {
            t: s.t,
            r_n: s.r_n,
            c_bn: s.c_bn,
            v_n: Some(s.v_n),
        }
    }
}

pub fn mag_header(n_arms: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for k in 1..=n_arms {
        for axis in ["x", "y", "z"] {
            h.push(format!("m{k}{axis}"));
        }
    }
    h
}

struct Table {
    file: String,
    header: Vec<String>,
    rows: Vec<(usize, Vec<f64>)>,
}

fn read_table<R: Read>(reader: R, file: &str) -> Result<Table, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let schema = |line: usize, msg: String| PipelineError::Schema {
        file: file.to_string(),
        line,
        msg,
    };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| schema(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(schema(1, "missing header".into()));
    }
    let mut rows = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| schema(line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(schema(
                line,
                format!("expected {} columns, found {}", header.len(), rec.len()),
            ));
        }
        let mut values = Vec::with_capacity(rec.len());
        for (field, name) in rec.iter().zip(&header) {
            let v: f64 = field
                .parse()
                .map_err(|_| schema(line, format!("column `{name}`: cannot parse `{field}`")))?;
            if !v.is_finite() {
                return Err(PipelineError::NotFinite {
                    file: file.to_string(),
                    line,
                    column: name.clone(),
                });
            }
            values.push(v);
        }
        if !(values[0] > last_t) {
            return Err(PipelineError::NonMonotonic {
                file: file.to_string(),
                line,
                t: values[0],
            });
        }
        last_t = values[0];
        rows.push((line, values));
    }
    Ok(Table {
        file: file.to_string(),
        header,
        rows,
    })
}

fn expect_prefix(table: &Table, expected: &[&str]) -> Result<(), PipelineError> {
    let ok = table.header.len() >= expected.len() && table.header.iter().zip(expected).all(|(a, b)| a == b);
    if ok {
        Ok(())
    } else {
        Err(PipelineError::Schema {
            file: table.file.clone(),
            line: 1,
            msg: format!(
                "header must start with `{}`, found `{}`",
                expected.join(","),
                table.header.join(",")
            ),
        })
    }
}

pub fn parse_imu<R: Read>(reader: R, file: &str) -> Result<Vec<ImuSample>, PipelineError> {
    let table = read_table(reader, file)?;
    expect_prefix(&table, &IMU_HEADER)?;
    if table.header.len() != IMU_HEADER.len() {
        return Err(PipelineError::Schema {
            file: table.file,
            line: 1,
            msg: format!("IMU file has {} columns, expected 7", table.header.len()),
        });
    }
    Ok(table
        .rows
        .iter()
        .map(|(_, v)| ImuSample {
            t: v[0],
            gyro: Vector3::new(v[1], v[2], v[3]),
            accel: Vector3::new(v[4], v[5], v[6]),
        })
        .collect())
}

pub fn parse_mag<R: Read>(reader: R, file: &str, n_arms: usize) -> Result<Vec<ArrayEpoch>, PipelineError> {
    let table = read_table(reader, file)?;
    let columns = table.header.len().saturating_sub(1);
    if columns != 3 * n_arms {
        return Err(PipelineError::Schema {
            file: table.file,
            line: 1,
            msg: format!(
                "{columns} field columns, but the geometry has {n_arms} sensors ({} columns)",
                3 * n_arms
            ),
        });
    }
    let expected = mag_header(n_arms);
    let names: Vec<&str> = expected.iter().map(String::as_str).collect();
    expect_prefix(&table, &names)?;
    Ok(table
        .rows
        .iter()
        .map(|(_, v)| ArrayEpoch {
            t: v[0],
            readings: v[1..].chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
        })
        .collect())
}

pub fn parse_trajectory<R: Read>(reader: R, file: &str) -> Result<Vec<TrajectoryPoint>, PipelineError> {
    let table = read_table(reader, file)?;
    expect_prefix(&table, &TRAJECTORY_HEADER)?;
    let has_velocity = table.header.len() >= 11 && table.header[8..11].iter().zip(VELOCITY_HEADER).all(|(a, b)| a == b);
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, v) in &table.rows {
        let q = Quaternion::new(v[4], v[5], v[6], v[7]);
        if (q.norm() - 1.0).abs() > 1e-3 {
            return Err(PipelineError::Schema {
                file: table.file.clone(),
                line: *line,
                msg: format!("quaternion norm {:.6} is not 1", q.norm()),
            });
        }
        let c_bn = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        out.push(TrajectoryPoint {
            t: v[0],
            r_n: Vector3::new(v[1], v[2], v[3]),
            c_bn,
            v_n: has_velocity.then(|| Vector3::new(v[8], v[9], v[10])),
        });
    }
    Ok(out)
}

fn open(path: &Path) -> Result<File, PipelineError> {
    File::open(path).map_err(|e| PipelineError::io(path, e))
}

fn name(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, PipelineError> {
    parse_imu(open(path)?, &name(path))
}

pub fn read_mag(path: &Path, n_arms: usize) -> Result<Vec<ArrayEpoch>, PipelineError> {
    parse_mag(open(path)?, &name(path), n_arms)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>, PipelineError> {
    parse_trajectory(open(path)?, &name(path))
}

fn write_rows<W: Write>(writer: W, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn write_imu<W: Write>(writer: W, samples: &[ImuSample]) -> std::io::Result<()> {
    write_rows(
        writer,
        &strings(&IMU_HEADER),
        samples
            .iter()
            .map(|s| vec![s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z]),
    )
}

pub fn write_mag<W: Write>(writer: W, epochs: &[ArrayEpoch], n_arms: usize) -> std::io::Result<()> {
    write_rows(
        writer,
        &mag_header(n_arms),
        epochs.iter().map(|e| {
            std::iter::once(e.t)
                .chain(e.readings.iter().flat_map(|m| [m.x, m.y, m.z]))
                .collect()
        }),
    )
}

fn pose_row(t: f64, r: &Vector3<f64>, c: &Matrix3<f64>) -> Vec<f64> {
    let q = UnitQuaternion::from_matrix(c);
    // keep qw non-negative for a unique representation
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    vec![t, r.x, r.y, r.z, q.w, q.i, q.j, q.k]
}

/// Trajectory with optional velocity columns.
pub fn write_trajectory<W: Write>(writer: W, points: &[TrajectoryPoint]) -> std::io::Result<()> {
    let with_v = points.iter().all(|p| p.v_n.is_some()) && !points.is_empty();
    let mut header = strings(&TRAJECTORY_HEADER);
    if with_v {
        header.extend(strings(&VELOCITY_HEADER));
    }
    write_rows(
        writer,
        &header,
        points.iter().map(|p| {
            let mut row = pose_row(p.t, &p.r_n, &p.c_bn);
            if let (true, Some(v)) = (with_v, p.v_n) {
                row.extend([v.x, v.y, v.z]);
            }
            row
        }),
    )
}

/// Estimated navigation states: pose, velocity and both biases.
pub fn write_estimate<W: Write>(writer: W, states: &[NavState]) -> std::io::Result<()> {
    let mut header = strings(&TRAJECTORY_HEADER);
    header.extend(strings(&VELOCITY_HEADER));
    header.extend(strings(&BIAS_HEADER));
    write_rows(
        writer,
        &header,
        states.iter().map(|s| {
            let mut row = pose_row(s.t, &s.r_n, &s.c_bn);
            row.extend([s.v_n.x, s.v_n.y, s.v_n.z]);
            row.extend([s.bg.x, s.bg.y, s.bg.z, s.ba.x, s.ba.y, s.ba.z]);
            row
        }),
    )
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file(
    path: &Path,
    f: impl FnOnce(std::io::BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    f(std::io::BufWriter::new(file)).map_err(|e| PipelineError::io(path, e))
}
