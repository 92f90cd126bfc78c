//! Parametric warps that carry observed events to their aligned locations.
//!
//! Warped coordinates live on the ideal (undistorted) pinhole image plane of
//! the camera at the start of the packet. Lens distortion is removed once per
//! pixel when the [`BearingLut`] is built and never reapplied.

use nalgebra::Vector3;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::iwe::WarpedEvent;
use crate::par::{self, Execution};
use crate::so3::{rotation_exp, Rotation};
use crate::types::{EventPacket, NormalizedEvent, WarpParams};

/// Undistorted unit ray for every integer pixel of the sensor.
#[derive(Debug, Clone)]
pub struct BearingLut {
    width: u32,
    height: u32,
    rays: Vec<Vector3<f64>>,
}

impl BearingLut {
    pub fn build(camera: &CameraModel) -> Result<Self> {
        camera.validate()?;
        let mut rays = Vec::with_capacity(camera.pixel_count());
        for y in 0..camera.height {
            for x in 0..camera.width {
                let ray = camera
                    .unproject(x as f64, y as f64)
                    .ok_or(Error::Undistortion { x, y })?;
                rays.push(ray);
            }
        }
        Ok(Self { width: camera.width, height: camera.height, rays })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Ray of the pixel nearest to `(x, y)`.
    pub fn ray(&self, x: f64, y: f64) -> Option<&Vector3<f64>> {
        let (ix, iy) = (x.round(), y.round());
        if ix < 0.0 || iy < 0.0 || ix >= self.width as f64 || iy >= self.height as f64 {
            return None;
        }
        self.rays.get(iy as usize * self.width as usize + ix as usize)
    }

    pub fn rays(&self) -> &[Vector3<f64>] {
        &self.rays
    }
}

/// Rotation vector accumulated by normalized time `tau` under a linearly
/// varying angular velocity `omega0 + accel * t`.
pub fn affine_rotation_vector(omega0: &Vector3<f64>, accel: &Vector3<f64>, tau: f64, duration: f64) -> Vector3<f64> {
    let t = tau * duration;
    omega0 * t + accel * (0.5 * t * t)
}

fn lookup<'a>(event: &NormalizedEvent, lut: &'a BearingLut) -> Option<&'a Vector3<f64>> {
    lut.ray(event.x, event.y)
}

/// Constant angular velocity warp. `None` when the event leaves the front
/// half-space of the camera.
pub fn warp_rotational(
    event: &NormalizedEvent,
    omega: &Vector3<f64>,
    duration: f64,
    lut: &BearingLut,
    camera: &CameraModel,
) -> Option<(f64, f64)> {
    let ray = lookup(event, lut)?;
    let rotated = rotation_exp(omega, event.tau, duration).apply(ray);
    camera.project_ideal(&rotated)
}

/// Angular velocity varying linearly over the packet.
pub fn warp_affine(
    event: &NormalizedEvent,
    omega0: &Vector3<f64>,
    accel: &Vector3<f64>,
    duration: f64,
    lut: &BearingLut,
    camera: &CameraModel,
) -> Option<(f64, f64)> {
    let ray = lookup(event, lut)?;
    let phi = affine_rotation_vector(omega0, accel, event.tau, duration);
    let rotated = Rotation::from_vector(&phi).apply(ray);
    camera.project_ideal(&rotated)
}

/// Unit-depth translational flow; `v` is the scene velocity relative to the camera.
pub fn warp_translational(
    event: &NormalizedEvent,
    v: &Vector3<f64>,
    duration: f64,
    lut: &BearingLut,
    camera: &CameraModel,
) -> Option<(f64, f64)> {
    let ray = lookup(event, lut)?;
    let (u, w) = (ray.x / ray.z, ray.y / ray.z);
    let s = event.tau * duration;
    let u2 = u - s * (v.x - u * v.z);
    let w2 = w - s * (v.y - w * v.z);
    Some(camera.denormalize(u2, w2))
}

/// Warps a single event under any motion model.
pub fn warp_event(
    event: &NormalizedEvent,
    params: &WarpParams,
    duration: f64,
    lut: &BearingLut,
    camera: &CameraModel,
) -> Option<(f64, f64)> {
    match params {
        WarpParams::ConstOmega { omega } => warp_rotational(event, omega, duration, lut, camera),
        WarpParams::AffineOmega { omega0, accel } => warp_affine(event, omega0, accel, duration, lut, camera),
        WarpParams::LinearVel { v } => warp_translational(event, v, duration, lut, camera),
    }
}

/// Warps every event of a packet.
pub fn warp_packet(
    packet: &EventPacket,
    params: &WarpParams,
    lut: &BearingLut,
    camera: &CameraModel,
    exec: Execution,
) -> Vec<WarpedEvent> {
    let duration = packet.duration();
    par::map_range(exec, packet.events.len(), |i| {
        let e = &packet.events[i];
        WarpedEvent { position: warp_event(e, params, duration, lut, camera), polarity: e.polarity }
    })
}
