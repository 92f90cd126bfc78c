//! Per-packet motion estimation by Adam on finite-difference gradients.

use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::iwe::{accumulate, smooth_with, CanvasGeometry, CountImage, DEFAULT_PAD};
use crate::kernel::PacketLoss;
use crate::likelihood::LossConfig;
use crate::par::{self, Execution};
use crate::types::{packetize, Event, EventPacket, MotionModel, WarpParams};
use crate::warp::{warp_packet, BearingLut};

pub const DEFAULT_PACKET_SIZE: usize = 30_000;

/// Adam settings. Parameters are optimized in per-packet units (the packet
/// spans unit time), so `lr` and `fd_step` are in radians per packet for
/// angular velocity and in unit-depth displacement per packet for linear velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub max_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub fd_step: f64,
    pub warm_start: bool,
    /// Early stop after this many consecutive steps without a new lowest loss.
    pub stop_patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            max_iters: 250,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            fd_step: 1e-3,
            warm_start: true,
            stop_patience: 40,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.max_iters < 1 || !(self.fd_step > 0.0) || self.stop_patience < 1 {
            return Err(Error::InvalidParameter(format!(
                "need lr > 0, max_iters >= 1, fd_step > 0, stop_patience >= 1; got {} {} {} {}",
                self.lr, self.max_iters, self.fd_step, self.stop_patience
            )));
        }
        Ok(())
    }
}

/// Central differences `(L(x + h e_i) - L(x - h e_i)) / 2h`.
pub fn fd_gradient<F>(loss: &mut F, theta: &[f64], steps: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = steps[i];
        probe[i] = theta[i] + h;
        let up = loss(&probe)?;
        probe[i] = theta[i] - h;
        let down = loss(&probe)?;
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss(theta.to_vec()));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamOutcome {
    /// Best iterate seen.
    pub params: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    /// False when the run was cut short by a non-finite loss.
    pub converged: bool,
    /// Loss at every visited iterate.
    pub trace: Vec<f64>,
}

/// Adam with bias correction and no learning-rate decay. Returns the
/// lowest-loss iterate, so the result never scores worse than `theta0`.
pub fn adam_minimize<F>(mut loss: F, theta0: &[f64], config: &OptimConfig) -> Result<AdamOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    config.validate()?;
    let dim = theta0.len();
    let l0 = loss(theta0)?;
    if !l0.is_finite() {
        return Err(Error::NonFiniteLoss(theta0.to_vec()));
    }
    let steps = vec![config.fd_step; dim];
    let mut theta = theta0.to_vec();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut best = (theta.clone(), l0);
    let mut trace = vec![l0];
    let mut converged = true;
    let mut stale = 0;
    let mut iterations = 0;

    for t in 1..=config.max_iters {
        let grad = match fd_gradient(&mut loss, &theta, &steps) {
            Ok(g) => g,
            Err(_) => {
                converged = false;
                break;
            }
        };
        let bc1 = 1.0 - config.beta1.powi(t as i32);
        let bc2 = 1.0 - config.beta2.powi(t as i32);
        for i in 0..dim {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            let step = config.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + config.eps);
            theta[i] -= step;
        }
        iterations = t;
        let current = match loss(&theta) {
            Ok(l) if l.is_finite() => l,
            _ => {
                converged = false;
                break;
            }
        };
        trace.push(current);
        if current < best.1 {
            best = (theta.clone(), current);
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.stop_patience {
            break;
        }
    }
    Ok(AdamOutcome { params: best.0, loss: best.1, iterations, converged, trace })
}

/// Motion estimate for one packet.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityEstimate {
    pub params: WarpParams,
    pub t_start: f64,
    pub t_end: f64,
    pub t_mid: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl VelocityEstimate {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Velocity at the packet midpoint.
    pub fn velocity_at_mid(&self) -> nalgebra::Vector3<f64> {
        self.params.velocity_at(self.t_mid - self.t_start)
    }
}

/// Per-packet alignment pipeline: warp, accumulate, smooth, score, optimize.
#[derive(Debug, Clone)]
pub struct Aligner {
    camera: CameraModel,
    lut: BearingLut,
    model: MotionModel,
    loss: LossConfig,
    optim: OptimConfig,
    pad: usize,
    packet_size: usize,
    exec: Execution,
}

impl Aligner {
    pub fn new(camera: CameraModel, model: MotionModel, loss: LossConfig, optim: OptimConfig) -> Result<Self> {
        loss.validate()?;
        optim.validate()?;
        let lut = BearingLut::build(&camera)?;
        Ok(Self {
            camera,
            lut,
            model,
            loss,
            optim,
            pad: DEFAULT_PAD,
            packet_size: DEFAULT_PACKET_SIZE,
            exec: Execution::default(),
        })
    }

    pub fn with_pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn with_packet_size(mut self, n: usize) -> Self {
        self.packet_size = n;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn lut(&self) -> &BearingLut {
        &self.lut
    }

    pub fn model(&self) -> MotionModel {
        self.model
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn packet_size(&self) -> usize {
        self.packet_size
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    /// Loss function of one packet, ready for evaluation at arbitrary parameters.
    pub fn packet_loss(&self, packet: &EventPacket) -> Result<PacketLoss> {
        PacketLoss::new(packet, &self.lut, &self.camera, self.model, &self.loss, self.pad, self.exec)
    }

    pub fn estimate_packet(&self, packet: &EventPacket, init: Option<&WarpParams>) -> Result<VelocityEstimate> {
        let init = init.copied().unwrap_or_else(|| WarpParams::zero(self.model));
        if init.model() != self.model {
            return Err(Error::InvalidParameter("initial parameters use a different motion model".into()));
        }
        let mut lossf = self.packet_loss(packet)?;
        let duration = lossf.duration();
        let theta0 = init.to_normalized(duration);
        lossf.evaluate(&theta0)?;
        if lossf.last_accumulated() == 0 {
            return Err(Error::NoMappableEvents);
        }
        let outcome = adam_minimize(|th| lossf.evaluate(th), &theta0, &self.optim)?;
        Ok(VelocityEstimate {
            params: WarpParams::from_normalized(self.model, &outcome.params, duration)?,
            t_start: packet.t_start,
            t_end: packet.t_end,
            t_mid: packet.t_mid(),
            final_loss: outcome.loss,
            iterations: outcome.iterations,
            converged: outcome.converged,
        })
    }

    fn flagged(&self, packet: &EventPacket, init: WarpParams) -> VelocityEstimate {
        VelocityEstimate {
            params: init,
            t_start: packet.t_start,
            t_end: packet.t_end,
            t_mid: packet.t_mid(),
            final_loss: f64::NAN,
            iterations: 0,
            converged: false,
        }
    }

    /// Estimates every full packet of a stream in time order. A packet that
    /// fails yields a flagged estimate (`converged == false`, NaN loss).
    pub fn run_sequence(&self, stream: &[Event]) -> Result<Vec<VelocityEstimate>> {
        let packets = packetize(stream, self.packet_size)?;
        self.run_packets(&packets)
    }

    pub fn run_packets(&self, packets: &[EventPacket]) -> Result<Vec<VelocityEstimate>> {
        let zero = WarpParams::zero(self.model);
        if self.optim.warm_start {
            let mut out = Vec::with_capacity(packets.len());
            let mut init = zero;
            for p in packets {
                let est = self.estimate_packet(p, Some(&init)).unwrap_or_else(|_| self.flagged(p, init));
                if est.converged {
                    init = est.params;
                }
                out.push(est);
            }
            Ok(out)
        } else {
            Ok(par::map_range(self.exec, packets.len(), |i| {
                self.estimate_packet(&packets[i], None)
                    .unwrap_or_else(|_| self.flagged(&packets[i], zero))
            }))
        }
    }

    /// Smoothed images of warped events at `params`, for inspection.
    pub fn render(&self, packet: &EventPacket, params: &WarpParams) -> (CountImage, CountImage) {
        let warped = warp_packet(packet, params, &self.lut, &self.camera, self.exec);
        let geometry = CanvasGeometry::for_camera(&self.camera, self.pad);
        let (pos, neg) = accumulate(&warped, &geometry, self.loss.deposit);
        (smooth_with(&pos, self.loss.sigma, self.exec), smooth_with(&neg, self.loss.sigma, self.exec))
    }
}
