//! Fused per-packet loss evaluation.
//!
//! One evaluation warps every event, splats it onto the padded canvas with
//! the bilinear and Gaussian weights combined into a single separable
//! footprint, and scores the occupied pixels. Work is proportional to the
//! number of events plus the pixels they touch; untouched pixels enter the
//! objective in closed form.
//!
//! The canvas is cut into horizontal bands. Each band owns its rows, visits
//! the events whose footprint reaches into it, and scores and clears its own
//! pixels, so bands run in parallel without merging grids. Counts and sums
//! are fixed point, which makes the result independent of the number of
//! bands and of event order.

use nalgebra::Vector3;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::iwe::{gaussian_kernel, AxisTaps, CanvasGeometry, Deposit, MASS_SCALE};
use crate::likelihood::{LossConfig, ObjectiveSums, PixelObjective, RowSums};
use crate::par::{self, Execution};
use crate::so3::rotate_vector;
use crate::types::{EventPacket, MotionModel, Polarity, WarpParams};
use crate::warp::BearingLut;

const WARP_CHUNK: usize = 4096;
const MIN_BAND_ROWS: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Prepared {
    ray: Vector3<f64>,
    u: f64,
    w: f64,
    tau: f64,
    slot: u8,
}

#[derive(Debug, Clone, Copy, Default)]
struct Placed {
    x: f64,
    y: f64,
    row: u32,
    slot: u8,
    ok: bool,
}

#[derive(Debug, Default)]
struct Scratch {
    placed: Vec<Placed>,
    order: Vec<u32>,
    row_start: Vec<u32>,
    /// Interleaved `[positive, negative]` fixed-point counts; all zero between evaluations.
    grid: Vec<u64>,
}

/// Loss of one packet as a function of its motion parameters.
#[derive(Debug)]
pub struct PacketLoss {
    model: MotionModel,
    config: LossConfig,
    camera: CameraModel,
    geometry: CanvasGeometry,
    kernel: Vec<f64>,
    objective: PixelObjective,
    exec: Execution,
    duration: f64,
    events: Vec<Prepared>,
    off_sensor: usize,
    last_accumulated: usize,
    scratch: Scratch,
}

impl PacketLoss {
    pub fn new(
        packet: &EventPacket,
        lut: &BearingLut,
        camera: &CameraModel,
        model: MotionModel,
        config: &LossConfig,
        pad: usize,
        exec: Execution,
    ) -> Result<Self> {
        config.validate()?;
        if packet.events.is_empty() {
            return Err(Error::Empty("packet has no events"));
        }
        let mut events = Vec::with_capacity(packet.count());
        let mut off_sensor = 0;
        for e in &packet.events {
            match lut.ray(e.x, e.y) {
                Some(ray) => events.push(Prepared {
                    ray: *ray,
                    u: ray.x / ray.z,
                    w: ray.y / ray.z,
                    tau: e.tau,
                    slot: u8::from(e.polarity == Polarity::Negative),
                }),
                None => off_sensor += 1,
            }
        }
        let geometry = CanvasGeometry::for_camera(camera, pad);
        let scratch = Scratch {
            placed: vec![Placed::default(); events.len()],
            order: vec![0; events.len()],
            row_start: vec![0; geometry.height() + 1],
            grid: vec![0; 2 * geometry.pixel_count()],
        };
        Ok(Self {
            model,
            config: *config,
            camera: *camera,
            geometry,
            kernel: gaussian_kernel(config.sigma),
            objective: PixelObjective::new(config),
            exec,
            duration: packet.duration(),
            events,
            off_sensor,
            last_accumulated: 0,
            scratch,
        })
    }

    pub fn model(&self) -> MotionModel {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn geometry(&self) -> &CanvasGeometry {
        &self.geometry
    }

    /// Events deposited on the canvas by the most recent evaluation.
    pub fn last_accumulated(&self) -> usize {
        self.last_accumulated
    }

    /// Events that could not be deposited in the most recent evaluation.
    pub fn last_dropped(&self) -> usize {
        self.events.len() + self.off_sensor - self.last_accumulated
    }

    /// Loss at SI motion parameters.
    pub fn evaluate_params(&mut self, params: &WarpParams) -> Result<f64> {
        if params.model() != self.model {
            return Err(Error::InvalidParameter("motion model mismatch".into()));
        }
        let theta = params.to_normalized(self.duration);
        self.evaluate(&theta)
    }

    /// Loss at normalized parameters, i.e. rotation (or displacement) per
    /// packet rather than per second.
    pub fn evaluate(&mut self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.model.dim() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                self.model.dim(),
                theta.len()
            )));
        }
        let accumulated = self.place(theta);
        self.last_accumulated = accumulated;
        self.bucket_rows();
        let sums = self.splat_and_score();
        self.objective.finish(
            &sums,
            self.geometry.pixel_count(),
            accumulated,
            self.config.normalize_by_events,
        )
    }

    /// Warps every event and records where its deposit lands.
    fn place(&mut self, theta: &[f64]) -> usize {
        let model = self.model;
        let cam = self.camera;
        let geom = self.geometry;
        let deposit = self.config.deposit;
        let (w, h) = (geom.width(), geom.height());
        let t = |i: usize| Vector3::new(theta[i], theta[i + 1], theta[i + 2]);
        let (a, b) = match model {
            MotionModel::Affine => (t(0), t(3)),
            _ => (t(0), Vector3::zeros()),
        };
        let events = &self.events;
        let counts = par::map_chunks_mut(self.exec, &mut self.scratch.placed, WARP_CHUNK, |ci, chunk| {
            let base = ci * WARP_CHUNK;
            let mut ok_count = 0usize;
            for (j, slot) in chunk.iter_mut().enumerate() {
                let e = &events[base + j];
                let pixel = match model {
                    MotionModel::Rotation => cam.project_ideal(&rotate_vector(&(a * e.tau), &e.ray)),
                    MotionModel::Affine => {
                        let phi = a * e.tau + b * (0.5 * e.tau * e.tau);
                        cam.project_ideal(&rotate_vector(&phi, &e.ray))
                    }
                    MotionModel::Translation => {
                        let u = e.u - e.tau * (a.x - e.u * a.z);
                        let v = e.w - e.tau * (a.y - e.w * a.z);
                        Some(cam.denormalize(u, v))
                    }
                };
                *slot = match pixel {
                    Some((x, y)) => {
                        let (cx, cy) = geom.to_canvas(x, y);
                        match (anchor(cx, w, deposit), anchor(cy, h, deposit)) {
                            (Some(_), Some(row)) => {
                                ok_count += 1;
                                Placed { x: cx, y: cy, row: row as u32, slot: e.slot, ok: true }
                            }
                            _ => Placed { ok: false, ..Placed::default() },
                        }
                    }
                    None => Placed { ok: false, ..Placed::default() },
                };
            }
            ok_count
        });
        counts.into_iter().sum()
    }

    /// Stable counting sort of deposited events by anchor row.
    fn bucket_rows(&mut self) {
        let s = &mut self.scratch;
        s.row_start.iter_mut().for_each(|c| *c = 0);
        for p in s.placed.iter().filter(|p| p.ok) {
            s.row_start[p.row as usize + 1] += 1;
        }
        for i in 1..s.row_start.len() {
            s.row_start[i] += s.row_start[i - 1];
        }
        let mut next = s.row_start.clone();
        let mut n = 0;
        for (i, p) in s.placed.iter().enumerate() {
            if p.ok {
                let r = p.row as usize;
                s.order[next[r] as usize] = i as u32;
                next[r] += 1;
                n += 1;
            }
        }
        debug_assert_eq!(n as u32, s.row_start[s.row_start.len() - 1]);
    }

    fn band_rows(&self) -> usize {
        let h = self.geometry.height();
        let threads = par::current_threads(self.exec);
        if threads <= 1 {
            return h;
        }
        (h / (4 * threads)).max(MIN_BAND_ROWS)
    }

    fn splat_and_score(&mut self) -> ObjectiveSums {
        let band_rows = self.band_rows();
        let (w, h) = (self.geometry.width(), self.geometry.height());
        let radius = (self.kernel.len() / 2) as i64;
        let kernel = &self.kernel;
        let deposit = self.config.deposit;
        let objective = &self.objective;
        let Scratch { placed, order, row_start, grid } = &mut self.scratch;
        let (placed, order, row_start) = (&*placed, &*order, &*row_start);

        let partials = par::map_chunks_mut(self.exec, grid, 2 * w * band_rows, |band, cells| {
            let r0 = (band * band_rows) as i64;
            let r1 = (r0 + (cells.len() / (2 * w)) as i64).min(h as i64);
            let first = (r0 - radius - 1).clamp(0, h as i64) as usize;
            let last = (r1 + radius + 1).clamp(0, h as i64) as usize;
            let (mut min_x, mut max_x, mut min_y, mut max_y) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);

            let (mut tx, mut ty) = (AxisTaps::default(), AxisTaps::default());
            for &idx in &order[row_start[first] as usize..row_start[last] as usize] {
                let p = &placed[idx as usize];
                if !(ty.set(p.y, h, deposit, kernel) && tx.set(p.x, w, deposit, kernel)) {
                    continue;
                }
                let j_lo = (r0 - ty.start).max(0) as usize;
                let j_hi = ((r1 - ty.start).max(0) as usize).min(ty.len);
                if j_lo >= j_hi {
                    continue;
                }
                let i_lo = (-tx.start).max(0) as usize;
                let i_hi = ((w as i64 - tx.start).max(0) as usize).min(tx.len);
                let x_lo = (tx.start + i_lo as i64) as usize;
                min_x = min_x.min(x_lo as i64);
                max_x = max_x.max(tx.start + i_hi as i64 - 1);
                min_y = min_y.min(ty.start + j_lo as i64);
                max_y = max_y.max(ty.start + j_hi as i64 - 1);
                let slot = p.slot as usize;
                let wx = &tx.w[i_lo..i_hi];
                for j in j_lo..j_hi {
                    let wy = ty.w[j];
                    if wy == 0 {
                        continue;
                    }
                    let row = (ty.start + j as i64 - r0) as usize;
                    let line = &mut cells[2 * (w * row + x_lo)..2 * (w * row + x_lo + wx.len())];
                    for (pair, &wi) in line.chunks_exact_mut(2).zip(wx) {
                        pair[slot] += wi * wy;
                    }
                }
            }

            let mut sums = ObjectiveSums::default();
            if min_x > max_x {
                return sums;
            }
            for y in min_y..=max_y {
                let row = (y - r0) as usize;
                let line = &mut cells[2 * w * row + 2 * min_x as usize..2 * w * row + 2 * (max_x as usize + 1)];
                let mut acc = RowSums::default();
                for (n, v) in line.iter_mut().enumerate() {
                    if *v != 0 {
                        objective.add(&mut acc, *v as f64 / MASS_SCALE, n & 1);
                        *v = 0;
                    }
                }
                sums.absorb(&acc);
            }
            sums
        });
        partials.into_iter().fold(ObjectiveSums::default(), ObjectiveSums::merge)
    }
}

/// Grid index the deposit is anchored at, or `None` if it is dropped.
#[inline]
fn anchor(c: f64, extent: usize, deposit: Deposit) -> Option<i64> {
    if !c.is_finite() {
        return None;
    }
    match deposit {
        Deposit::Bilinear => {
            let base = c.floor();
            let i0 = base as i64;
            if i0 < 0 || i0 >= extent as i64 || (i0 == extent as i64 - 1 && c > base) {
                None
            } else {
                Some(i0)
            }
        }
        Deposit::Nearest => {
            let i0 = (c + 0.5).floor() as i64;
            (i0 >= 0 && i0 < extent as i64).then_some(i0)
        }
    }
}
