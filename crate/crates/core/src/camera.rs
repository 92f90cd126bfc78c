//! Pinhole intrinsics with radial-tangential distortion.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WIDTH: u32 = 240;
pub const DEFAULT_HEIGHT: u32 = 180;

const UNDISTORT_MAX_ITERS: usize = 20;
const UNDISTORT_TOL: f64 = 1e-10;

/// Radial-tangential coefficients in the usual `k1 k2 p1 p2 k3` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl Distortion {
    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0 && self.k3 == 0.0
    }

    /// Applies the distortion to normalized image coordinates.
    pub fn distort(&self, u: f64, w: f64) -> (f64, f64) {
        let r2 = u * u + w * w;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let du = 2.0 * self.p1 * u * w + self.p2 * (r2 + 2.0 * u * u);
        let dw = self.p1 * (r2 + 2.0 * w * w) + 2.0 * self.p2 * u * w;
        (u * radial + du, w * radial + dw)
    }

    /// Inverts [`Distortion::distort`] by fixed-point iteration. Returns
    /// `None` if the residual does not drop below tolerance in time.
    pub fn undistort(&self, ud: f64, wd: f64) -> Option<(f64, f64)> {
        if self.is_zero() {
            return Some((ud, wd));
        }
        let (mut u, mut w) = (ud, wd);
        for _ in 0..UNDISTORT_MAX_ITERS {
            let r2 = u * u + w * w;
            let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
            let du = 2.0 * self.p1 * u * w + self.p2 * (r2 + 2.0 * u * u);
            let dw = self.p1 * (r2 + 2.0 * w * w) + 2.0 * self.p2 * u * w;
            u = (ud - du) / radial;
            w = (wd - dw) / radial;
            let (ru, rw) = self.distort(u, w);
            if (ru - ud).abs().max((rw - wd).abs()) < UNDISTORT_TOL {
                return Some((u, w));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: Distortion,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, distortion: Distortion, width: u32, height: u32) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, distortion, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Ideal pinhole camera with no distortion.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(fx, fy, cx, cy, Distortion::default(), width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain([self.distortion.k1, self.distortion.k2, self.distortion.p1, self.distortion.p2, self.distortion.k3].iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("camera parameters must be finite".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({}, {}) outside {}x{} sensor",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Pixel to normalized coordinates, ignoring distortion.
    pub fn normalize(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.fx, (y - self.cy) / self.fy)
    }

    /// Normalized coordinates to pixel, ignoring distortion.
    pub fn denormalize(&self, u: f64, w: f64) -> (f64, f64) {
        (self.fx * u + self.cx, self.fy * w + self.cy)
    }

    /// Undistorted unit ray through a (distorted) pixel.
    pub fn unproject(&self, x: f64, y: f64) -> Option<Vector3<f64>> {
        let (ud, wd) = self.normalize(x, y);
        let (u, w) = self.distortion.undistort(ud, wd)?;
        Some(Vector3::new(u, w, 1.0).normalize())
    }

    /// Ideal pinhole projection of a ray. `None` when the ray does not point
    /// in front of the camera.
    pub fn project_ideal(&self, ray: &Vector3<f64>) -> Option<(f64, f64)> {
        if ray.z <= 1e-6 {
            return None;
        }
        Some(self.denormalize(ray.x / ray.z, ray.y / ray.z))
    }

    /// Projection through the lens distortion onto the sensor.
    pub fn project_distorted(&self, ray: &Vector3<f64>) -> Option<(f64, f64)> {
        if ray.z <= 1e-6 {
            return None;
        }
        let (ud, wd) = self.distortion.distort(ray.x / ray.z, ray.y / ray.z);
        Some(self.denormalize(ud, wd))
    }
}
