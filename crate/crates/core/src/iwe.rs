//! Images of warped events: padded per-polarity count grids.
//!
//! Deposits are quantized to fixed point (2^-20 per axis) and summed as
//! integers, so a grid does not depend on the order events arrive in.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::types::Polarity;

pub const DEFAULT_PAD: usize = 100;
pub const DEFAULT_SIGMA: f64 = 1.0;
/// Largest supported smoothing width; keeps footprints inside [`MAX_TAPS`].
pub const MAX_SIGMA: f64 = 10.0;

pub(crate) const AXIS_SCALE: u64 = 1 << 20;
pub(crate) const MASS_SCALE: f64 = (AXIS_SCALE * AXIS_SCALE) as f64;
pub(crate) const MAX_TAPS: usize = 64;

/// Canvas extent: the sensor plus `pad` pixels on every side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasGeometry {
    pub pad: usize,
    pub sensor_width: usize,
    pub sensor_height: usize,
}

impl CanvasGeometry {
    pub fn new(sensor_width: usize, sensor_height: usize, pad: usize) -> Self {
        Self { pad, sensor_width, sensor_height }
    }

    pub fn for_camera(camera: &CameraModel, pad: usize) -> Self {
        Self::new(camera.width as usize, camera.height as usize, pad)
    }

    pub fn width(&self) -> usize {
        self.sensor_width + 2 * self.pad
    }

    pub fn height(&self) -> usize {
        self.sensor_height + 2 * self.pad
    }

    pub fn pixel_count(&self) -> usize {
        self.width() * self.height()
    }

    /// Sensor coordinates to canvas coordinates.
    #[inline]
    pub fn to_canvas(&self, x: f64, y: f64) -> (f64, f64) {
        (x + self.pad as f64, y + self.pad as f64)
    }
}

/// How a warped event is spread onto the pixel grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deposit {
    #[default]
    Bilinear,
    Nearest,
}

/// A warped event position in sensor coordinates; `None` if unmappable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedEvent {
    pub position: Option<(f64, f64)>,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountImage {
    geometry: CanvasGeometry,
    polarity: Polarity,
    data: Vec<f64>,
    accumulated: usize,
    dropped: usize,
}

impl CountImage {
    pub fn zeros(geometry: CanvasGeometry, polarity: Polarity) -> Self {
        Self { geometry, polarity, data: vec![0.0; geometry.pixel_count()], accumulated: 0, dropped: 0 }
    }

    /// Wraps a raw row-major grid.
    pub fn from_data(geometry: CanvasGeometry, polarity: Polarity, data: Vec<f64>, accumulated: usize) -> Result<Self> {
        if data.len() != geometry.pixel_count() {
            return Err(Error::InvalidParameter(format!(
                "grid has {} pixels, geometry needs {}",
                data.len(),
                geometry.pixel_count()
            )));
        }
        if data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("counts must be finite and non-negative".into()));
        }
        Ok(Self { geometry, polarity, data, accumulated, dropped: 0 })
    }

    pub fn geometry(&self) -> &CanvasGeometry {
        &self.geometry
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn accumulated_count(&self) -> usize {
        self.accumulated
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped
    }

    /// Value at canvas pixel `(x, y)`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.geometry.width() + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Writes a binary 16-bit PGM, scaling the maximum to 65535.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        let (w, h) = (self.geometry.width(), self.geometry.height());
        write!(out, "P5\n{w} {h}\n65535\n")?;
        let max = self.max();
        let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
        let mut bytes = Vec::with_capacity(2 * self.data.len());
        for v in &self.data {
            let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
            bytes.extend_from_slice(&q.to_be_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }
}

/// Normalized Gaussian taps `-R..=R` with `R = ceil(3 sigma)`; `[1.0]` for sigma 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|g| g / total).collect()
}

/// Quantized 1-D weights of one deposit along one axis. Reused across
/// deposits; only the first `len` weights are meaningful.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisTaps {
    pub start: i64,
    pub len: usize,
    pub w: [u64; MAX_TAPS],
}

impl Default for AxisTaps {
    fn default() -> Self {
        AxisTaps { start: 0, len: 0, w: [0; MAX_TAPS] }
    }
}

impl AxisTaps {
    /// Taps for a point at continuous canvas coordinate `c`, convolved with
    /// `kernel`. `false` when the unsmoothed deposit leaves `[0, extent)`.
    #[inline]
    pub fn set(&mut self, c: f64, extent: usize, deposit: Deposit, kernel: &[f64]) -> bool {
        if !c.is_finite() {
            return false;
        }
        let radius = (kernel.len() / 2) as i64;
        let (i0, frac) = match deposit {
            Deposit::Bilinear => {
                let base = c.floor();
                let frac = c - base;
                let i0 = base as i64;
                if i0 < 0 || i0 >= extent as i64 || (i0 == extent as i64 - 1 && frac > 0.0) {
                    return false;
                }
                (i0, Some(frac))
            }
            Deposit::Nearest => {
                let i0 = (c + 0.5).floor() as i64;
                if i0 < 0 || i0 >= extent as i64 {
                    return false;
                }
                (i0, None)
            }
        };
        let len = kernel.len() + usize::from(frac.is_some());
        let real = |j: usize| match frac {
            Some(f) => {
                let left = if j > 0 { f * kernel[j - 1] } else { 0.0 };
                let right = if j < kernel.len() { (1.0 - f) * kernel[j] } else { 0.0 };
                left + right
            }
            None => kernel[j],
        };
        // cumulative rounding keeps the quantized taps summing to exactly AXIS_SCALE
        let mut cum = 0.0;
        let mut prev = 0u64;
        for j in 0..len {
            cum += real(j);
            let q = if j + 1 == len { AXIS_SCALE } else { ((cum * AXIS_SCALE as f64).round() as u64).min(AXIS_SCALE) };
            self.w[j] = q.saturating_sub(prev);
            prev = prev.max(q);
        }
        self.start = i0 - radius;
        self.len = len;
        true
    }
}

/// Deposits warped events onto a pair of per-polarity canvases without smoothing.
pub fn accumulate(warped: &[WarpedEvent], geometry: &CanvasGeometry, deposit: Deposit) -> (CountImage, CountImage) {
    let (w, h) = (geometry.width(), geometry.height());
    let mut grids = [vec![0u64; w * h], vec![0u64; w * h]];
    let mut accumulated = [0usize; 2];
    let mut dropped = [0usize; 2];
    let unit = [1.0];
    let (mut tx, mut ty) = (AxisTaps::default(), AxisTaps::default());
    for e in warped {
        let slot = usize::from(e.polarity == Polarity::Negative);
        let placed = e.position.is_some_and(|(x, y)| {
            let (cx, cy) = geometry.to_canvas(x, y);
            tx.set(cx, w, deposit, &unit) && ty.set(cy, h, deposit, &unit)
        });
        if !placed {
            dropped[slot] += 1;
            continue;
        }
        accumulated[slot] += 1;
        for j in 0..ty.len {
            let y = ty.start + j as i64;
            if ty.w[j] == 0 || y < 0 || y >= h as i64 {
                continue;
            }
            for i in 0..tx.len {
                let x = tx.start + i as i64;
                if tx.w[i] == 0 || x < 0 || x >= w as i64 {
                    continue;
                }
                grids[slot][y as usize * w + x as usize] += tx.w[i] * ty.w[j];
            }
        }
    }
    let [pos, neg] = grids;
    let build = |grid: Vec<u64>, polarity, slot: usize| CountImage {
        geometry: *geometry,
        polarity,
        data: grid.into_iter().map(|v| v as f64 / MASS_SCALE).collect(),
        accumulated: accumulated[slot],
        dropped: dropped[slot],
    };
    (build(pos, Polarity::Positive, 0), build(neg, Polarity::Negative, 1))
}

/// Separable Gaussian smoothing with zero padding at the canvas border.
pub fn smooth(image: &CountImage, sigma: f64) -> CountImage {
    smooth_with(image, sigma, Execution::default())
}

pub fn smooth_with(image: &CountImage, sigma: f64, exec: Execution) -> CountImage {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (image.geometry.width(), image.geometry.height());
    let src = &image.data;

    let mut tmp = vec![0.0; w * h];
    par::for_each_chunk_mut(exec, &mut tmp, w, |y, row| {
        let line = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, g) in kernel.iter().enumerate() {
                let xx = x as i64 + j as i64 - radius;
                if xx >= 0 && xx < w as i64 {
                    acc += g * line[xx as usize];
                }
            }
            *out = acc;
        }
    });

    let mut data = vec![0.0; w * h];
    par::for_each_chunk_mut(exec, &mut data, w, |y, row| {
        for (j, g) in kernel.iter().enumerate() {
            let yy = y as i64 + j as i64 - radius;
            if yy < 0 || yy >= h as i64 {
                continue;
            }
            let line = &tmp[yy as usize * w..(yy as usize + 1) * w];
            for (out, v) in row.iter_mut().zip(line) {
                *out += g * v;
            }
        }
    });

    CountImage { data, ..image.clone() }
}
