//! Camera motion estimation from event streams by maximising the likelihood
//! of motion-compensated events under a spatio-temporal Poisson point
//! process with a negative-binomial marginal.
//!
//! The usual entry point is [`Aligner`], which splits a stream into
//! fixed-size packets and fits a [`WarpParams`] per packet.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod iwe;
pub mod kernel;
pub mod likelihood;
pub mod optimizer;
pub mod par;
pub mod prior;
pub mod reduce;
pub mod simulator;
pub mod so3;
pub mod special;
pub mod types;
pub mod warp;

pub use camera::{CameraModel, Distortion};
pub use error::{Error, Result};
pub use iwe::{CanvasGeometry, CountImage, Deposit};
pub use kernel::PacketLoss;
pub use likelihood::{LossConfig, Objective};
pub use optimizer::{Aligner, OptimConfig, VelocityEstimate};
pub use par::Execution;
pub use types::{Event, EventPacket, MotionModel, Polarity, PriorParams, WarpParams};
pub use warp::BearingLut;
