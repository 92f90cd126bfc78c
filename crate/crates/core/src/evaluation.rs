//! Comparison of velocity estimates against ground truth.

use std::io::{BufRead, Write};

use nalgebra::Vector3;

use crate::dataset::ImuSample;
use crate::error::{Error, Result};
use crate::optimizer::VelocityEstimate;
use crate::types::{MotionModel, WarpParams};

/// Default IMU-to-camera time offset, seconds.
pub const DEFAULT_IMU_LAG: f64 = 2.4e-3;

pub const METRICS_HEADER: &str = "sequence,method,e_wx,e_wy,e_wz,sigma,rms,rms_pct";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    /// Inputs in rad/s, metrics in deg/s.
    Angular,
    /// Inputs and metrics in the same linear unit.
    Linear,
}

impl Units {
    fn factor(self) -> f64 {
        match self {
            Units::Angular => 180.0 / std::f64::consts::PI,
            Units::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub e_wx: f64,
    pub e_wy: f64,
    pub e_wz: f64,
    /// Population standard deviation of the error norm.
    pub sigma: f64,
    pub rms: f64,
    /// `rms` relative to the largest ground-truth norm; `None` when the
    /// ground truth is identically zero.
    pub rms_pct: Option<f64>,
    pub count: usize,
}

impl Metrics {
    pub fn csv_row(&self, sequence: &str, method: &str) -> String {
        let pct = self.rms_pct.map_or_else(|| "nan".to_owned(), |p| p.to_string());
        format!(
            "{sequence},{method},{},{},{},{},{},{pct}",
            self.e_wx, self.e_wy, self.e_wz, self.sigma, self.rms
        )
    }
}

/// Linear interpolation in a time-sorted series.
pub fn interpolate(series: &[(f64, Vector3<f64>)], t: f64) -> Result<Vector3<f64>> {
    let (first, last) = match (series.first(), series.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Empty("ground-truth series")),
    };
    if !(t >= first.0 && t <= last.0) {
        return Err(Error::OutOfRange { t, start: first.0, end: last.0 });
    }
    if series.len() == 1 {
        return Ok(first.1);
    }
    let hi = series.partition_point(|s| s.0 < t).clamp(1, series.len() - 1);
    let ((t0, a), (t1, b)) = (series[hi - 1], series[hi]);
    let s = (t - t0) / (t1 - t0);
    Ok(a + (b - a) * s)
}

/// Gyro reading at `t - lag`, linearly interpolated.
pub fn gt_velocity_at(imu: &[ImuSample], t: f64, lag: f64) -> Result<Vector3<f64>> {
    let (first, last) = match (imu.first(), imu.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Empty("IMU series")),
    };
    let q = t - lag;
    if !(q >= first.t && q <= last.t) {
        return Err(Error::OutOfRange { t: q, start: first.t, end: last.t });
    }
    if imu.len() == 1 {
        return Ok(first.gyro);
    }
    let hi = imu.partition_point(|s| s.t < q).clamp(1, imu.len() - 1);
    let (a, b) = (&imu[hi - 1], &imu[hi]);
    let s = (q - a.t) / (b.t - a.t);
    Ok(a.gyro + (b.gyro - a.gyro) * s)
}

/// Metrics for paired estimate / ground-truth vectors.
pub fn metrics_from_pairs(est: &[Vector3<f64>], gt: &[Vector3<f64>], units: Units) -> Result<Metrics> {
    if est.len() != gt.len() {
        return Err(Error::InvalidParameter(format!("{} estimates but {} ground-truth values", est.len(), gt.len())));
    }
    if est.is_empty() {
        return Err(Error::Empty("estimates"));
    }
    let k = units.factor();
    let n = est.len() as f64;
    let errors: Vec<Vector3<f64>> = est.iter().zip(gt).map(|(e, g)| (e - g) * k).collect();
    let mean_abs = |i: usize| errors.iter().map(|e| e[i].abs()).sum::<f64>() / n;
    let norms: Vec<f64> = errors.iter().map(|e| e.norm()).collect();
    let mean_norm = norms.iter().sum::<f64>() / n;
    let sigma = (norms.iter().map(|x| (x - mean_norm).powi(2)).sum::<f64>() / n).sqrt();
    let rms = (norms.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    let excursion = gt.iter().map(|g| g.norm() * k).fold(0.0, f64::max);
    let rms_pct = (excursion > 0.0).then(|| 100.0 * rms / excursion);
    Ok(Metrics { e_wx: mean_abs(0), e_wy: mean_abs(1), e_wz: mean_abs(2), sigma, rms, rms_pct, count: est.len() })
}

/// Scores each estimate's mid-packet velocity against `gt(t_mid)`.
/// Estimates with a non-finite loss (failed packets) are skipped. Every
/// timestamp the ground truth cannot answer is reported together.
pub fn compute_metrics<F>(estimates: &[VelocityEstimate], gt: F, units: Units) -> Result<Metrics>
where
    F: Fn(f64) -> Result<Vector3<f64>>,
{
    let mut est = Vec::with_capacity(estimates.len());
    let mut truth = Vec::with_capacity(estimates.len());
    let mut gaps = Vec::new();
    for e in estimates.iter().filter(|e| e.final_loss.is_finite()) {
        match gt(e.t_mid) {
            Ok(g) => {
                est.push(e.velocity_at_mid());
                truth.push(g);
            }
            Err(Error::OutOfRange { .. }) => gaps.push(e.t_mid),
            Err(other) => return Err(other),
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Coverage(gaps));
    }
    metrics_from_pairs(&est, &truth, units)
}

/// Least-squares scale `s` minimising `sum |s * est - gt|^2`.
pub fn fit_scale(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "scale fit needs equal non-empty inputs, got {} and {}",
            est.len(),
            gt.len()
        )));
    }
    let num: f64 = est.iter().zip(gt).map(|(e, g)| e.dot(g)).sum();
    let den: f64 = est.iter().map(|e| e.norm_squared()).sum();
    if den == 0.0 {
        return Err(Error::InvalidParameter("all estimates are zero".into()));
    }
    Ok(num / den)
}

/// Multiplies every parameter of each estimate by `s`.
pub fn scale_estimates(estimates: &[VelocityEstimate], s: f64) -> Vec<VelocityEstimate> {
    estimates
        .iter()
        .map(|e| {
            let p: Vec<f64> = e.params.to_vec().iter().map(|x| x * s).collect();
            VelocityEstimate { params: WarpParams::from_slice(e.params.model(), &p).expect("same model"), ..e.clone() }
        })
        .collect()
}

pub fn estimates_header(model: MotionModel) -> String {
    format!("t_mid,{},final_loss,iterations,converged,duration", model.column_names().join(","))
}

/// Writes estimates as CSV; all must share `model`.
pub fn write_estimates<W: Write>(estimates: &[VelocityEstimate], model: MotionModel, mut out: W) -> Result<()> {
    writeln!(out, "{}", estimates_header(model))?;
    for e in estimates {
        if e.params.model() != model {
            return Err(Error::InvalidParameter("estimates mix motion models".into()));
        }
        let params: Vec<String> = e.params.to_vec().iter().map(f64::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.t_mid,
            params.join(","),
            e.final_loss,
            e.iterations,
            e.converged,
            e.duration()
        )?;
    }
    Ok(())
}

/// Reads an estimates CSV; the motion model is inferred from the header.
pub fn read_estimates<R: BufRead>(source: R) -> Result<(MotionModel, Vec<VelocityEstimate>)> {
    let mut lines = source.lines();
    let header = lines.next().ok_or(Error::Empty("estimates file"))??;
    let model = [MotionModel::Rotation, MotionModel::Affine, MotionModel::Translation]
        .into_iter()
        .find(|m| estimates_header(*m) == header.trim())
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("unrecognised header '{}'", header.trim()) })?;
    let dim = model.dim();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 5 {
            return Err(Error::Parse { line: line_no, msg: format!("expected {} fields, found {}", dim + 5, fields.len()) });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse { line: line_no, msg: format!("not a number: '{s}'") })
        };
        let t_mid = num(fields[0])?;
        let params = fields[1..=dim].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let final_loss = num(fields[dim + 1])?;
        let iterations = fields[dim + 2]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, msg: format!("bad iteration count '{}'", fields[dim + 2]) })?;
        let converged = fields[dim + 3]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, msg: format!("bad converged flag '{}'", fields[dim + 3]) })?;
        let duration = num(fields[dim + 4])?;
        out.push(VelocityEstimate {
            params: WarpParams::from_slice(model, &params)?,
            t_start: t_mid - duration / 2.0,
            t_end: t_mid + duration / 2.0,
            t_mid,
            final_loss,
            iterations,
            converged,
        });
    }
    Ok((model, out))
}
