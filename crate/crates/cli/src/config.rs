//! Run configuration: JSON file with command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stppp_core::dataset::GtFrame;
use stppp_core::likelihood::LossConfig;
use stppp_core::{Deposit, MotionModel, Objective, OptimConfig, PriorParams};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSource {
    /// Fit to the unaligned events of the first packet.
    Fit,
    Fixed { r: f64, q: f64 },
}

impl Default for PriorSource {
    fn default() -> Self {
        PriorSource::Fixed { r: 0.1, q: 0.39 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: MotionModel,
    pub objective: Objective,
    pub packet_size: usize,
    pub pad: usize,
    pub sigma: f64,
    pub prior: PriorSource,
    pub normalize_by_events: bool,
    pub deposit: Deposit,
    pub lr: f64,
    pub max_iters: usize,
    pub fd_step: f64,
    pub warm_start: bool,
    pub width: u32,
    pub height: u32,
    pub imu_lag_ms: f64,
    pub gt_frame: GtFrame,
}

impl Default for RunConfig {
    fn default() -> Self {
        let optim = OptimConfig::default();
        let loss = LossConfig::default();
        RunConfig {
            model: MotionModel::Rotation,
            objective: loss.objective,
            packet_size: stppp_core::optimizer::DEFAULT_PACKET_SIZE,
            pad: stppp_core::iwe::DEFAULT_PAD,
            sigma: loss.sigma,
            prior: PriorSource::default(),
            normalize_by_events: loss.normalize_by_events,
            deposit: loss.deposit,
            lr: optim.lr,
            max_iters: optim.max_iters,
            fd_step: optim.fd_step,
            warm_start: optim.warm_start,
            width: stppp_core::camera::DEFAULT_WIDTH,
            height: stppp_core::camera::DEFAULT_HEIGHT,
            imu_lag_ms: stppp_core::evaluation::DEFAULT_IMU_LAG * 1e3,
            gt_frame: GtFrame::Camera,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            max_iters: self.max_iters,
            fd_step: self.fd_step,
            warm_start: self.warm_start,
            ..OptimConfig::default()
        }
    }

    pub fn loss(&self, prior: PriorParams) -> LossConfig {
        LossConfig {
            objective: self.objective,
            prior,
            sigma: self.sigma,
            normalize_by_events: self.normalize_by_events,
            deposit: self.deposit,
        }
    }
}

/// Parses `--prior`: `fit`, `R,Q`, or the path of a `prior.json`.
pub fn parse_prior(arg: &str) -> Result<PriorSource, CliError> {
    if arg == "fit" {
        return Ok(PriorSource::Fit);
    }
    if let Some((r, q)) = arg.split_once(',') {
        if let (Ok(r), Ok(q)) = (r.trim().parse(), q.trim().parse()) {
            return Ok(PriorSource::Fixed { r, q });
        }
    }
    let text = std::fs::read_to_string(arg).map_err(|e| CliError::input(format!("prior '{arg}': {e}")))?;
    let p: PriorParams = serde_json::from_str(&text).map_err(|e| CliError::input(format!("{arg}: {e}")))?;
    Ok(PriorSource::Fixed { r: p.r, q: p.q })
}

/// Parses a comma-separated list of numbers.
pub fn parse_list(arg: &str) -> Result<Vec<f64>, CliError> {
    arg.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::usage(format!("not a number: '{s}'"))))
        .collect()
}
