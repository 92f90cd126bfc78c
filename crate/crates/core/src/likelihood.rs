//! Alignment objectives over images of warped events.
//!
//! All objectives are negated so that smaller means better aligned. Counts
//! may be non-integer after bilinear voting and smoothing; the pmfs are
//! extended to real `k` through the log-gamma function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iwe::{CountImage, Deposit, DEFAULT_SIGMA, MAX_SIGMA};
use crate::reduce::ExactSum;
use crate::special::{digamma, ln_gamma, ln_gamma_diff};
use crate::types::PriorParams;

/// Counts below this are treated as empty by the per-pixel ML-rate objective.
pub const ML_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Negative-binomial marginal likelihood (Gamma prior on the rates).
    #[default]
    Nb,
    /// Poisson likelihood with each pixel's rate set to its own count.
    PoissonMl,
    /// Image variance (contrast maximization).
    Cmax,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Nb => "nb",
            Objective::PoissonMl => "poisson-ml",
            Objective::Cmax => "cmax",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nb" => Ok(Objective::Nb),
            "poisson-ml" | "ml" => Ok(Objective::PoissonMl),
            "cmax" => Ok(Objective::Cmax),
            other => Err(Error::InvalidParameter(format!("unknown objective '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub objective: Objective,
    pub prior: PriorParams,
    /// Gaussian smoothing applied to the count images, in pixels.
    pub sigma: f64,
    /// Divide the log-likelihood by the number of events on the canvas.
    pub normalize_by_events: bool,
    pub deposit: Deposit,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Nb,
            prior: PriorParams { r: 0.1, q: 0.39 },
            sigma: DEFAULT_SIGMA,
            normalize_by_events: true,
            deposit: Deposit::Bilinear,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        PriorParams::new(self.prior.r, self.prior.q)?;
        if !(self.sigma >= 0.0 && self.sigma <= MAX_SIGMA) {
            return Err(Error::InvalidParameter(format!(
                "smoothing sigma must lie in [0, {MAX_SIGMA}], got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

fn check_nb(r: f64, q: f64) -> Result<()> {
    PriorParams::new(r, q).map(|_| ())
}

/// Log pmf of the negative binomial `NB(r, q)` at a real count `k >= 0`:
/// `lnG(k + r) - lnG(r) - lnG(k + 1) + r ln(1 - q) + k ln q`.
pub fn nb_log_pmf(k: f64, r: f64, q: f64) -> Result<f64> {
    check_nb(r, q)?;
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("count must be finite and >= 0, got {k}")));
    }
    if k == 0.0 {
        return Ok(r * (1.0 - q).ln());
    }
    Ok(ln_gamma(k + r) - ln_gamma(r) - ln_gamma(k + 1.0) + r * (1.0 - q).ln() + k * q.ln())
}

/// Log pmf of `Pois(lambda)` at a real count `k >= 0`.
pub fn poisson_log_pmf(k: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("Poisson rate must be > 0, got {lambda}")));
    }
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("count must be finite and >= 0, got {k}")));
    }
    if k == 0.0 {
        return Ok(-lambda);
    }
    Ok(k * lambda.ln() - lambda - ln_gamma(k + 1.0))
}

const TABLE_MAX: f64 = 16.0;
const TABLE_STEPS: f64 = 512.0;

/// `ln G(k + r + 1) - ln G(k + 1)` for `k >= 0`: tabulated on `[0, 16)` and
/// interpolated with cubic Hermite splines (error below 1e-13), exact above.
/// The function is smooth on the whole range because its singularities sit
/// at `k <= -1`.
#[derive(Debug, Clone)]
pub(crate) struct GammaRatioTable {
    r: f64,
    /// Value and step-scaled derivative at each node.
    nodes: Vec<(f64, f64)>,
}

impl GammaRatioTable {
    pub fn new(r: f64) -> Self {
        let n = (TABLE_MAX * TABLE_STEPS) as usize;
        let nodes = (0..=n)
            .map(|j| {
                let k = j as f64 / TABLE_STEPS;
                (ln_gamma_diff(k + r + 1.0, k + 1.0), (digamma(k + r + 1.0) - digamma(k + 1.0)) / TABLE_STEPS)
            })
            .collect();
        GammaRatioTable { r, nodes }
    }

    #[inline]
    pub fn eval(&self, k: f64) -> f64 {
        if k >= TABLE_MAX {
            return ln_gamma_diff(k + self.r + 1.0, k + 1.0);
        }
        let s = k * TABLE_STEPS;
        let j = s as usize;
        let t = s - j as f64;
        let (f0, d0) = self.nodes[j];
        let (f1, d1) = self.nodes[j + 1];
        let df = f1 - f0;
        f0 + t * (d0 + t * (3.0 * df - 2.0 * d0 - d1 + t * (d0 + d1 - 2.0 * df)))
    }
}

/// Per-pixel contribution of one objective, expressed relative to an empty
/// pixel so that only occupied pixels need visiting.
#[derive(Debug, Clone)]
pub(crate) enum PixelObjective {
    Nb { r: f64, ln_gamma_r: f64, ln_q: f64, empty: f64, ratio: GammaRatioTable },
    PoissonMl,
    Cmax,
}

/// Running sums over occupied pixels.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ObjectiveSums {
    /// Log-likelihood excess over empty pixels, both polarities.
    pub excess: ExactSum,
    /// Sum of counts per polarity.
    pub s1: [ExactSum; 2],
    /// Sum of squared counts per polarity.
    pub s2: [ExactSum; 2],
}

/// Plain floating-point sums over one canvas row. Rows are always visited
/// left to right, so these are deterministic; rows are then combined with
/// [`ExactSum`] so the total does not depend on how rows are grouped.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RowSums {
    excess: f64,
    s1: [f64; 2],
    s2: [f64; 2],
}

impl ObjectiveSums {
    pub fn absorb(&mut self, row: &RowSums) {
        self.excess.add(row.excess);
        for slot in 0..2 {
            self.s1[slot].add(row.s1[slot]);
            self.s2[slot].add(row.s2[slot]);
        }
    }

    pub fn merge(self, o: ObjectiveSums) -> ObjectiveSums {
        ObjectiveSums {
            excess: self.excess.merge(o.excess),
            s1: [self.s1[0].merge(o.s1[0]), self.s1[1].merge(o.s1[1])],
            s2: [self.s2[0].merge(o.s2[0]), self.s2[1].merge(o.s2[1])],
        }
    }
}

impl PixelObjective {
    pub fn new(config: &LossConfig) -> Self {
        match config.objective {
            Objective::Nb => {
                let PriorParams { r, q } = config.prior;
                PixelObjective::Nb {
                    r,
                    ln_gamma_r: ln_gamma(r),
                    ln_q: q.ln(),
                    empty: r * (1.0 - q).ln(),
                    ratio: GammaRatioTable::new(r),
                }
            }
            Objective::PoissonMl => PixelObjective::PoissonMl,
            Objective::Cmax => PixelObjective::Cmax,
        }
    }

    /// Adds pixel value `k > 0` of polarity slot `slot`.
    #[inline]
    pub fn add(&self, sums: &mut RowSums, k: f64, slot: usize) {
        match self {
            PixelObjective::Nb { r, ln_gamma_r, ln_q, ratio, .. } => {
                // ln G(k + r) - ln G(k + 1) with the singular factor split off
                sums.excess += ratio.eval(k) - (k + r).ln() - ln_gamma_r + k * ln_q;
            }
            PixelObjective::PoissonMl => {
                if k >= ML_EPSILON {
                    sums.excess += k * k.ln() - k - ln_gamma(k + 1.0);
                }
            }
            PixelObjective::Cmax => {
                sums.s1[slot] += k;
                sums.s2[slot] += k * k;
            }
        }
    }

    /// Turns pixel sums into the loss. `pixels` is the canvas size of one image.
    pub fn finish(&self, sums: &ObjectiveSums, pixels: usize, events: usize, normalize: bool) -> Result<f64> {
        let norm = || -> Result<f64> {
            if !normalize {
                return Ok(1.0);
            }
            if events == 0 {
                return Err(Error::NoMappableEvents);
            }
            Ok(events as f64)
        };
        match self {
            PixelObjective::Nb { empty, .. } => {
                let log_lik = 2.0 * pixels as f64 * empty + sums.excess.value();
                Ok(-log_lik / norm()?)
            }
            PixelObjective::PoissonMl => Ok(-sums.excess.value() / norm()?),
            PixelObjective::Cmax => {
                let p = pixels as f64;
                let var = |slot: usize| {
                    let mean = sums.s1[slot].value() / p;
                    sums.s2[slot].value() / p - mean * mean
                };
                Ok(-(var(0) + var(1)))
            }
        }
    }
}

fn check_pair(pos: &CountImage, neg: &CountImage) -> Result<()> {
    if pos.geometry() != neg.geometry() {
        return Err(Error::InvalidParameter("count images have different geometry".into()));
    }
    Ok(())
}

fn image_loss(pos: &CountImage, neg: &CountImage, config: &LossConfig, objective: Objective) -> Result<f64> {
    check_pair(pos, neg)?;
    let cfg = LossConfig { objective, ..*config };
    let term = PixelObjective::new(&cfg);
    // each pixel is absorbed exactly, so the loss ignores pixel order
    let mut sums = ObjectiveSums::default();
    for (slot, image) in [pos, neg].into_iter().enumerate() {
        for &k in image.data().iter().filter(|&&k| k > 0.0) {
            let mut one = RowSums::default();
            term.add(&mut one, k, slot);
            sums.absorb(&one);
        }
    }
    let events = pos.accumulated_count() + neg.accumulated_count();
    term.finish(&sums, pos.data().len(), events, config.normalize_by_events)
}

/// Polarity-split negative-binomial loss: minus the summed log pmf of every
/// canvas pixel in both images.
pub fn stppp_loss(pos: &CountImage, neg: &CountImage, config: &LossConfig) -> Result<f64> {
    config.validate()?;
    image_loss(pos, neg, config, Objective::Nb)
}

/// Poisson loss with the maximum-likelihood rate `lambda = k` at every pixel.
pub fn ml_lambda_loss(pos: &CountImage, neg: &CountImage, config: &LossConfig) -> Result<f64> {
    image_loss(pos, neg, config, Objective::PoissonMl)
}

/// Minus the summed population variance of both images.
pub fn cmax_loss(pos: &CountImage, neg: &CountImage, config: &LossConfig) -> Result<f64> {
    image_loss(pos, neg, config, Objective::Cmax)
}

/// Dispatches on `config.objective`.
pub fn loss(pos: &CountImage, neg: &CountImage, config: &LossConfig) -> Result<f64> {
    match config.objective {
        Objective::Nb => stppp_loss(pos, neg, config),
        Objective::PoissonMl => ml_lambda_loss(pos, neg, config),
        Objective::Cmax => cmax_loss(pos, neg, config),
    }
}
