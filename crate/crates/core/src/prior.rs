//! Maximum-likelihood fit of the Gamma prior on per-pixel event rates.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::special::ln_gamma;
use crate::types::{Event, Polarity, PriorParams};

const MAX_ITERS: usize = 500;
const PARAM_TOL: f64 = 1e-8;

/// Frequency of each per-pixel event count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountHistogram {
    bins: BTreeMap<u64, u64>,
}

impl CountHistogram {
    pub fn from_counts<I: IntoIterator<Item = u64>>(counts: I) -> Self {
        let mut bins = BTreeMap::new();
        for k in counts {
            *bins.entry(k).or_insert(0) += 1;
        }
        Self { bins }
    }

    /// Per-pixel counts of raw (unwarped) events, one grid per polarity,
    /// pooled into a single histogram over all sensor pixels.
    pub fn from_events(events: &[Event], camera: &CameraModel) -> Self {
        let (w, h) = (camera.width as usize, camera.height as usize);
        let mut grids = [vec![0u64; w * h], vec![0u64; w * h]];
        for e in events {
            let (x, y) = ((e.x + 0.5).floor(), (e.y + 0.5).floor());
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                continue;
            }
            let slot = usize::from(e.polarity == Polarity::Negative);
            grids[slot][y as usize * w + x as usize] += 1;
        }
        let [a, b] = grids;
        Self::from_counts(a.into_iter().chain(b))
    }

    pub fn add(&mut self, count: u64, frequency: u64) {
        *self.bins.entry(count).or_insert(0) += frequency;
    }

    pub fn total(&self) -> u64 {
        self.bins.values().sum()
    }

    pub fn bins(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.bins.iter().map(|(k, n)| (*k, *n))
    }

    pub fn mean(&self) -> f64 {
        let n = self.total() as f64;
        self.bins().map(|(k, c)| k as f64 * c as f64).sum::<f64>() / n
    }

    pub fn variance(&self) -> f64 {
        let n = self.total() as f64;
        let m = self.mean();
        self.bins().map(|(k, c)| c as f64 * (k as f64 - m).powi(2)).sum::<f64>() / n
    }
}

/// Mean NB log-likelihood of the histogram and its gradient with respect
/// to `(ln r, logit q)`.
struct Objective<'a> {
    hist: &'a CountHistogram,
    n: f64,
    mean: f64,
}

impl Objective<'_> {
    fn params(x: &Vector2<f64>) -> (f64, f64) {
        (x[0].exp(), 1.0 / (1.0 + (-x[1]).exp()))
    }

    /// Negative mean log-likelihood and gradient.
    fn eval(&self, x: &Vector2<f64>) -> (f64, Vector2<f64>) {
        let (r, q) = Self::params(x);
        let ln_gamma_r = ln_gamma(r);
        let mut ll = 0.0;
        // psi(k + r) - psi(r) = sum_{j<k} 1/(r + j) for integer k
        let mut dpsi = 0.0;
        let mut harmonic = 0.0;
        let mut j = 0u64;
        for (k, c) in self.hist.bins() {
            while j < k {
                harmonic += 1.0 / (r + j as f64);
                j += 1;
            }
            let c = c as f64;
            ll += c * (ln_gamma(k as f64 + r) - ln_gamma_r - ln_gamma(k as f64 + 1.0));
            dpsi += c * harmonic;
        }
        let softplus = (-x[1]).exp().ln_1p();
        let ln_q = -softplus;
        let ln_1q = -x[1] - softplus;
        let f = -(ll / self.n + r * ln_1q + self.mean * ln_q);
        let d_r = dpsi / self.n + ln_1q;
        let d_q = self.mean / q - r / (1.0 - q);
        let grad = Vector2::new(-r * d_r, -q * (1.0 - q) * d_q);
        (f, grad)
    }
}

/// Fits `(r, q)` by BFGS on `(ln r, logit q)`, started from the method of moments.
pub fn fit_gamma_prior(hist: &CountHistogram) -> Result<PriorParams> {
    if hist.bins.len() < 2 {
        return Err(Error::PriorNotIdentifiable("fewer than two distinct count values".into()));
    }
    let mean = hist.mean();
    let var = hist.variance();
    if !(var > mean) {
        return Err(Error::PriorNotIdentifiable(format!(
            "counts are not over-dispersed (mean {mean}, variance {var})"
        )));
    }
    let obj = Objective { hist, n: hist.total() as f64, mean };
    let q0 = 1.0 - mean / var;
    let r0 = mean * mean / (var - mean);
    let mut x = Vector2::new(r0.ln(), (q0 / (1.0 - q0)).ln());
    let (mut f, mut g) = obj.eval(&x);
    let mut h_inv = Matrix2::identity();

    for _ in 0..MAX_ITERS {
        let mut dir = -(h_inv * g);
        if dir.dot(&g) >= 0.0 {
            h_inv = Matrix2::identity();
            dir = -g;
        }
        let mut step = 1.0;
        let (x_new, f_new, g_new) = loop {
            let cand = x + dir * step;
            let (fc, gc) = obj.eval(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * step * g.dot(&dir) {
                break (cand, fc, gc);
            }
            step *= 0.5;
            if step < 1e-20 {
                break (x, f, g);
            }
        };
        let s = x_new - x;
        let y = g_new - g;
        x = x_new;
        f = f_new;
        g = g_new;
        if s.amax() < PARAM_TOL {
            break;
        }
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = Matrix2::identity();
            h_inv = (i - s * y.transpose() * rho) * h_inv * (i - y * s.transpose() * rho) + s * s.transpose() * rho;
        }
    }
    let _ = f;
    let (r, q) = Objective::params(&x);
    PriorParams::new(r, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_counts_not_identifiable() {
        let hist = CountHistogram::from_counts(std::iter::repeat_n(3, 100));
        assert!(matches!(fit_gamma_prior(&hist), Err(Error::PriorNotIdentifiable(_))));
    }

    #[test]
    fn underdispersed_counts_not_identifiable() {
        let hist = CountHistogram::from_counts((0..100).map(|i| 1 + (i % 2)));
        assert!(fit_gamma_prior(&hist).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let hist = CountHistogram::from_counts([0, 0, 0, 1, 0, 2, 5, 0, 1, 0, 0, 3, 9, 0]);
        let obj = Objective { hist: &hist, n: hist.total() as f64, mean: hist.mean() };
        let x = Vector2::new(-0.7, 0.2);
        let (_, g) = obj.eval(&x);
        for i in 0..2 {
            let mut e = Vector2::zeros();
            e[i] = 1e-6;
            let fd = (obj.eval(&(x + e)).0 - obj.eval(&(x - e)).0) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn moments_of_histogram() {
        let hist = CountHistogram::from_counts([0, 2, 4]);
        assert_eq!(hist.mean(), 2.0);
        assert!((hist.variance() - 8.0 / 3.0).abs() < 1e-15);
    }
}
