//! Shared event types, packetization and time normalization.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of the brightness change that triggered an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    /// Dataset files encode polarity as 0/1; 0 is a negative event.
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    pub fn to_bit(self) -> u8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => 0,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

/// A single event in raw sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: f64,
    pub y: f64,
    /// Seconds.
    pub t: f64,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(x: f64, y: f64, t: f64, polarity: Polarity) -> Self {
        Self { x, y, t, polarity }
    }
}

/// An event whose timestamp has been mapped into the unit interval of its packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedEvent {
    pub x: f64,
    pub y: f64,
    pub tau: f64,
    pub polarity: Polarity,
}

/// A fixed-count batch of consecutive events with time rescaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventPacket {
    pub events: Vec<NormalizedEvent>,
    pub t_start: f64,
    pub t_end: f64,
}

impl EventPacket {
    pub fn count(&self) -> usize {
        self.events.len()
    }

    /// Packet duration in seconds.
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn t_mid(&self) -> f64 {
        self.t_start + (self.t_end - self.t_start) / 2.0
    }

    /// Recovers the original timestamp of a normalized time.
    pub fn denormalize(&self, tau: f64) -> f64 {
        self.t_start + tau * (self.t_end - self.t_start)
    }

    /// Rebuilds the raw events this packet was made from.
    pub fn to_events(&self) -> Vec<Event> {
        self.events
            .iter()
            .map(|e| Event::new(e.x, e.y, self.denormalize(e.tau), e.polarity))
            .collect()
    }
}

/// Maps timestamps affinely so `t_start -> 0` and `t_end -> 1`.
pub fn normalize_time(events: &[Event], t_start: f64, t_end: f64) -> Result<Vec<NormalizedEvent>> {
    if !(t_end > t_start) {
        return Err(Error::DegeneratePacket(t_start));
    }
    let span = t_end - t_start;
    Ok(events
        .iter()
        .map(|e| NormalizedEvent {
            x: e.x,
            y: e.y,
            tau: (e.t - t_start) / span,
            polarity: e.polarity,
        })
        .collect())
}

/// Checks that timestamps never decrease.
pub fn check_monotonic(stream: &[Event]) -> Result<()> {
    for (index, pair) in stream.windows(2).enumerate() {
        if pair[1].t < pair[0].t || pair[1].t.is_nan() {
            return Err(Error::NonMonotonic {
                index: index + 1,
                prev: pair[0].t,
                next: pair[1].t,
            });
        }
    }
    Ok(())
}

/// Splits a stream into non-overlapping packets of `n` events. A trailing
/// remainder shorter than `n` is dropped.
pub fn packetize(stream: &[Event], n: usize) -> Result<Vec<EventPacket>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("packet size must be >= 2, got {n}")));
    }
    check_monotonic(stream)?;
    stream
        .chunks_exact(n)
        .map(|chunk| {
            let t_start = chunk[0].t;
            let t_end = chunk[chunk.len() - 1].t;
            let events = normalize_time(chunk, t_start, t_end)?;
            Ok(EventPacket { events, t_start, t_end })
        })
        .collect()
}

/// Gamma prior on the per-pixel Poisson rate, shape `r` and rate `(1 - q) / q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub r: f64,
    pub q: f64,
}

impl PriorParams {
    pub fn new(r: f64, q: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("prior shape r must be > 0, got {r}")));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidParameter(format!("prior q must lie in (0, 1), got {q}")));
        }
        Ok(Self { r, q })
    }

    /// Mean of the prior rate, `r q / (1 - q)`.
    pub fn mean(&self) -> f64 {
        self.r * self.q / (1.0 - self.q)
    }
}

/// Which parametric motion a packet is aligned with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionModel {
    /// Constant angular velocity.
    Rotation,
    /// Angular velocity varying linearly in time.
    Affine,
    /// Linear velocity at unit depth.
    Translation,
}

impl MotionModel {
    pub fn dim(self) -> usize {
        match self {
            MotionModel::Rotation | MotionModel::Translation => 3,
            MotionModel::Affine => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionModel::Rotation => "rotation",
            MotionModel::Affine => "affine",
            MotionModel::Translation => "translation",
        }
    }

    pub fn column_names(self) -> &'static [&'static str] {
        match self {
            MotionModel::Rotation => &["wx", "wy", "wz"],
            MotionModel::Affine => &["w0x", "w0y", "w0z", "ax", "ay", "az"],
            MotionModel::Translation => &["vx", "vy", "vz"],
        }
    }
}

impl std::str::FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(MotionModel::Rotation),
            "affine" => Ok(MotionModel::Affine),
            "translation" => Ok(MotionModel::Translation),
            other => Err(Error::InvalidParameter(format!("unknown motion model '{other}'"))),
        }
    }
}

/// Motion parameters in SI units (rad/s, rad/s^2, unit-depth 1/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarpParams {
    ConstOmega { omega: Vector3<f64> },
    AffineOmega { omega0: Vector3<f64>, accel: Vector3<f64> },
    /// Velocity of the scene relative to the camera, at unit depth.
    LinearVel { v: Vector3<f64> },
}

impl WarpParams {
    pub fn zero(model: MotionModel) -> Self {
        match model {
            MotionModel::Rotation => WarpParams::ConstOmega { omega: Vector3::zeros() },
            MotionModel::Affine => WarpParams::AffineOmega {
                omega0: Vector3::zeros(),
                accel: Vector3::zeros(),
            },
            MotionModel::Translation => WarpParams::LinearVel { v: Vector3::zeros() },
        }
    }

    pub fn model(&self) -> MotionModel {
        match self {
            WarpParams::ConstOmega { .. } => MotionModel::Rotation,
            WarpParams::AffineOmega { .. } => MotionModel::Affine,
            WarpParams::LinearVel { .. } => MotionModel::Translation,
        }
    }

    pub fn dim(&self) -> usize {
        self.model().dim()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            WarpParams::ConstOmega { omega } => omega.iter().copied().collect(),
            WarpParams::AffineOmega { omega0, accel } => omega0.iter().chain(accel.iter()).copied().collect(),
            WarpParams::LinearVel { v } => v.iter().copied().collect(),
        }
    }

    pub fn from_slice(model: MotionModel, p: &[f64]) -> Result<Self> {
        if p.len() != model.dim() {
            return Err(Error::InvalidParameter(format!(
                "{} model takes {} parameters, got {}",
                model.name(),
                model.dim(),
                p.len()
            )));
        }
        let v3 = |i: usize| Vector3::new(p[i], p[i + 1], p[i + 2]);
        Ok(match model {
            MotionModel::Rotation => WarpParams::ConstOmega { omega: v3(0) },
            MotionModel::Affine => WarpParams::AffineOmega { omega0: v3(0), accel: v3(3) },
            MotionModel::Translation => WarpParams::LinearVel { v: v3(0) },
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|x| x.is_finite())
    }

    /// Converts to per-packet units where the packet spans unit time:
    /// velocities scale by the duration, accelerations by its square.
    pub fn to_normalized(&self, duration: f64) -> Vec<f64> {
        match self {
            WarpParams::ConstOmega { omega } => (omega * duration).iter().copied().collect(),
            WarpParams::AffineOmega { omega0, accel } => (omega0 * duration)
                .iter()
                .chain((accel * (duration * duration)).iter())
                .copied()
                .collect(),
            WarpParams::LinearVel { v } => (v * duration).iter().copied().collect(),
        }
    }

    /// Inverse of [`WarpParams::to_normalized`].
    pub fn from_normalized(model: MotionModel, theta: &[f64], duration: f64) -> Result<Self> {
        let mut p = theta.to_vec();
        for (i, x) in p.iter_mut().enumerate() {
            *x /= if i < 3 { duration } else { duration * duration };
        }
        Self::from_slice(model, &p)
    }

    /// Angular (or linear) velocity at `dt` seconds after the packet start.
    pub fn velocity_at(&self, dt: f64) -> Vector3<f64> {
        match self {
            WarpParams::ConstOmega { omega } => *omega,
            WarpParams::AffineOmega { omega0, accel } => omega0 + accel * dt,
            WarpParams::LinearVel { v } => *v,
        }
    }
}
