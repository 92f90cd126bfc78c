//! Plain-text dataset layout: `events.txt`, `calib.txt`, `imu.txt`,
//! `groundtruth.txt`. Every file is whitespace separated, one record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Distortion};
use crate::error::{Error, Result};
use crate::types::{Event, Polarity};

const QUAT_NORM_TOL: f64 = 1e-3;

pub const EVENTS_FILE: &str = "events.txt";
pub const CALIB_FILE: &str = "calib.txt";
pub const IMU_FILE: &str = "imu.txt";
pub const POSES_FILE: &str = "groundtruth.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vector3<f64>,
    /// Body-frame angular velocity, rad/s.
    pub gyro: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub position: Vector3<f64>,
    /// Camera-to-world rotation.
    pub orientation: UnitQuaternion<f64>,
}

/// Frame in which ground-truth linear velocity is expressed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtFrame {
    #[default]
    Camera,
    World,
}

impl std::str::FromStr for GtFrame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "camera" => Ok(GtFrame::Camera),
            "world" => Ok(GtFrame::World),
            other => Err(Error::InvalidParameter(format!("unknown frame '{other}'"))),
        }
    }
}

/// Yields `(line_number, fields)` for non-blank, non-comment lines.
fn records<R: BufRead>(source: R) -> impl Iterator<Item = Result<(usize, Vec<String>)>> {
    source.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(l) => {
            let trimmed = l.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, trimmed.split_whitespace().map(str::to_owned).collect())))
            }
        }
    })
}

fn numbers(line: usize, fields: &[String], expected: usize) -> Result<Vec<f64>> {
    if fields.len() != expected {
        return Err(Error::Parse { line, msg: format!("expected {expected} fields, found {}", fields.len()) });
    }
    fields
        .iter()
        .map(|f| {
            let v: f64 = f.parse().map_err(|_| Error::Parse { line, msg: format!("not a number: '{f}'") })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse { line, msg: format!("non-finite value '{f}'") })
            }
        })
        .collect()
}

/// Parses `t x y p` lines; `p` is 0 (negative) or 1 (positive).
pub fn parse_events<R: BufRead>(source: R, width: u32, height: u32) -> Result<Vec<Event>> {
    let mut out: Vec<Event> = Vec::new();
    for rec in records(source) {
        let (line, fields) = rec?;
        let v = numbers(line, &fields, 4)?;
        let (t, x, y) = (v[0], v[1], v[2]);
        let polarity = match fields[3].as_str() {
            "0" => Polarity::Negative,
            "1" => Polarity::Positive,
            other => return Err(Error::Parse { line, msg: format!("polarity must be 0 or 1, got '{other}'") }),
        };
        if !(x >= 0.0 && x < width as f64 && y >= 0.0 && y < height as f64) {
            return Err(Error::Parse { line, msg: format!("pixel ({x}, {y}) outside {width}x{height} sensor") });
        }
        if let Some(prev) = out.last() {
            if t < prev.t {
                return Err(Error::Parse { line, msg: format!("timestamp {t} earlier than {}", prev.t) });
            }
        }
        out.push(Event::new(x, y, t, polarity));
    }
    Ok(out)
}

pub fn write_events<W: Write>(events: &[Event], mut out: W) -> Result<()> {
    for e in events {
        writeln!(out, "{} {} {} {}", e.t, e.x, e.y, e.polarity.to_bit())?;
    }
    Ok(())
}

/// Parses the single line `fx fy cx cy k1 k2 p1 p2 k3`.
pub fn parse_calibration<R: BufRead>(source: R, width: u32, height: u32) -> Result<CameraModel> {
    let mut rows = records(source);
    let (line, fields) = rows.next().ok_or(Error::Empty("calibration file"))??;
    let v = numbers(line, &fields, 9)?;
    if let Some(extra) = rows.next() {
        let (line, _) = extra?;
        return Err(Error::Parse { line, msg: "calibration must be a single line".into() });
    }
    let distortion = Distortion { k1: v[4], k2: v[5], p1: v[6], p2: v[7], k3: v[8] };
    CameraModel::new(v[0], v[1], v[2], v[3], distortion, width, height)
        .map_err(|e| Error::Parse { line, msg: e.to_string() })
}

pub fn write_calibration<W: Write>(camera: &CameraModel, mut out: W) -> Result<()> {
    let d = &camera.distortion;
    writeln!(
        out,
        "{} {} {} {} {} {} {} {} {}",
        camera.fx, camera.fy, camera.cx, camera.cy, d.k1, d.k2, d.p1, d.p2, d.k3
    )?;
    Ok(())
}

fn check_increasing(line: usize, prev: Option<f64>, t: f64) -> Result<()> {
    match prev {
        Some(p) if t <= p => Err(Error::Parse { line, msg: format!("timestamp {t} not after {p}") }),
        _ => Ok(()),
    }
}

/// Parses `t ax ay az gx gy gz` lines with strictly increasing time.
pub fn parse_imu<R: BufRead>(source: R) -> Result<Vec<ImuSample>> {
    let mut out: Vec<ImuSample> = Vec::new();
    for rec in records(source) {
        let (line, fields) = rec?;
        let v = numbers(line, &fields, 7)?;
        check_increasing(line, out.last().map(|s| s.t), v[0])?;
        out.push(ImuSample {
            t: v[0],
            accel: Vector3::new(v[1], v[2], v[3]),
            gyro: Vector3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

pub fn write_imu<W: Write>(samples: &[ImuSample], mut out: W) -> Result<()> {
    for s in samples {
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            s.t, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z
        )?;
    }
    Ok(())
}

/// Parses `t px py pz qx qy qz qw` lines. Quaternions within 1e-3 of unit
/// norm are renormalized; anything further off is rejected.
pub fn parse_poses<R: BufRead>(source: R) -> Result<Vec<PoseSample>> {
    let mut out: Vec<PoseSample> = Vec::new();
    for rec in records(source) {
        let (line, fields) = rec?;
        let v = numbers(line, &fields, 8)?;
        check_increasing(line, out.last().map(|s| s.t), v[0])?;
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(Error::Parse { line, msg: format!("quaternion norm {norm} is not unit") });
        }
        out.push(PoseSample {
            t: v[0],
            position: Vector3::new(v[1], v[2], v[3]),
            orientation: UnitQuaternion::from_quaternion(q),
        });
    }
    Ok(out)
}

pub fn write_poses<W: Write>(poses: &[PoseSample], mut out: W) -> Result<()> {
    for p in poses {
        let q = p.orientation.quaternion();
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.t, p.position.x, p.position.y, p.position.z, q.i, q.j, q.k, q.w
        )?;
    }
    Ok(())
}

/// Contents of a dataset directory. IMU and pose files are optional.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub camera: CameraModel,
    pub events: Vec<Event>,
    pub imu: Option<Vec<ImuSample>>,
    pub poses: Option<Vec<PoseSample>>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

/// Loads `calib.txt` and `events.txt` plus `imu.txt` / `groundtruth.txt` when present.
pub fn load_dataset(dir: &Path, width: u32, height: u32) -> Result<Dataset> {
    let path = dir.join(CALIB_FILE);
    let camera = in_file(&path, parse_calibration(open(&path)?, width, height))?;
    let path = dir.join(EVENTS_FILE);
    let events = in_file(&path, parse_events(open(&path)?, width, height))?;
    let path = dir.join(IMU_FILE);
    let imu = if path.exists() { Some(in_file(&path, parse_imu(open(&path)?))?) } else { None };
    let path = dir.join(POSES_FILE);
    let poses = if path.exists() { Some(in_file(&path, parse_poses(open(&path)?))?) } else { None };
    Ok(Dataset { camera, events, imu, poses })
}

/// Camera orientation at time `t`, interpolated between the bracketing poses.
pub fn orientation_at(poses: &[PoseSample], t: f64) -> Result<UnitQuaternion<f64>> {
    let (first, last) = match (poses.first(), poses.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Empty("pose series")),
    };
    if t < first.t || t > last.t {
        return Err(Error::OutOfRange { t, start: first.t, end: last.t });
    }
    let hi = poses.partition_point(|p| p.t < t).max(1).min(poses.len() - 1);
    let (a, b) = (&poses[hi - 1], &poses[hi]);
    let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
    Ok(a.orientation.slerp(&b.orientation, s))
}

/// Linear velocity from positions by finite differences.
///
/// Interior samples use central differences over their two neighbours and
/// the two ends use one-sided differences; each value is stamped at the
/// midpoint of the samples it was computed from. With two samples there is
/// a single value.
pub fn gt_linear_velocity(poses: &[PoseSample], frame: GtFrame) -> Result<Vec<(f64, Vector3<f64>)>> {
    if poses.len() < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 poses, got {}", poses.len())));
    }
    for (i, w) in poses.windows(2).enumerate() {
        if w[1].t <= w[0].t {
            return Err(Error::InvalidParameter(format!("duplicate or unsorted pose timestamp at index {}", i + 1)));
        }
    }
    let diff = |a: &PoseSample, b: &PoseSample| ((a.t + b.t) / 2.0, (b.position - a.position) / (b.t - a.t));
    let n = poses.len();
    let mut out = vec![diff(&poses[0], &poses[1])];
    for i in 1..n.saturating_sub(1) {
        out.push(diff(&poses[i - 1], &poses[i + 1]));
    }
    if n > 2 {
        out.push(diff(&poses[n - 2], &poses[n - 1]));
    }
    if frame == GtFrame::Camera {
        for (t, v) in out.iter_mut() {
            *v = orientation_at(poses, *t)?.inverse_transform_vector(v);
        }
    }
    Ok(out)
}
