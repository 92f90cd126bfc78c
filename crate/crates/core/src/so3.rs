//! Rotations from angular velocity via the exponential map.

use nalgebra::{Matrix3, Vector3};

/// Below this angle the closed form loses precision and a Taylor expansion is used.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix with `skew(w) * u == w.cross(u)`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Rodrigues' formula for `exp(skew(phi))`.
    pub fn from_vector(phi: &Vector3<f64>) -> Self {
        let theta2 = phi.norm_squared();
        let s = skew(phi);
        if theta2.sqrt() < SMALL_ANGLE {
            return Rotation(Matrix3::identity() + s + s * s * 0.5);
        }
        let theta = theta2.sqrt();
        let (sin, cos) = theta.sin_cos();
        Rotation(Matrix3::identity() + s * (sin / theta) + s * s * ((1.0 - cos) / theta2))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Largest deviation from orthogonality and from unit determinant.
    pub fn defect(&self) -> (f64, f64) {
        let orth = (self.0.transpose() * self.0 - Matrix3::identity()).abs().max();
        (orth, (self.0.determinant() - 1.0).abs())
    }
}

/// Rotation accumulated after normalized time `t` of a packet lasting
/// `duration` seconds at constant angular velocity `omega` (rad/s).
pub fn rotation_exp(omega: &Vector3<f64>, t: f64, duration: f64) -> Rotation {
    Rotation::from_vector(&(omega * t * duration))
}

/// Applies `exp(skew(phi))` to `v` without forming the matrix.
#[inline]
pub fn rotate_vector(phi: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    let theta2 = phi.norm_squared();
    let c1 = phi.cross(v);
    let c2 = phi.cross(&c1);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return v + c1 + c2 * 0.5;
    }
    let theta = theta2.sqrt();
    let (sin, cos) = theta.sin_cos();
    v + c1 * (sin / theta) + c2 * ((1.0 - cos) / theta2)
}
