//! Log-gamma for positive real arguments.

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const SHIFT: f64 = 10.0;

/// Natural log of the gamma function for `x > 0`.
///
/// Arguments below 10 are shifted up by ten with the recurrence
/// `ln G(x) = ln G(x + 10) - ln(x (x + 1) ... (x + 9))` and the Stirling
/// series is evaluated there (absolute error around 1e-14).
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    if x >= SHIFT {
        return stirling(x);
    }
    stirling(x + SHIFT) - rising10(x).ln()
}

/// `ln G(a) - ln G(b)` for positive arguments, sharing one logarithm for
/// the shift products when both are small.
#[inline]
pub fn ln_gamma_diff(a: f64, b: f64) -> f64 {
    if a >= SHIFT || b >= SHIFT {
        return ln_gamma(a) - ln_gamma(b);
    }
    stirling(a + SHIFT) - stirling(b + SHIFT) - (rising10(a) / rising10(b)).ln()
}

/// `x (x + 1) ... (x + 9)`, multiplied as a balanced tree.
#[inline]
fn rising10(x: f64) -> f64 {
    let p01 = x * (x + 1.0);
    let p23 = (x + 2.0) * (x + 3.0);
    let p45 = (x + 4.0) * (x + 5.0);
    let p67 = (x + 6.0) * (x + 7.0);
    let p89 = (x + 8.0) * (x + 9.0);
    (p01 * p23) * (p45 * p67) * p89
}

#[inline]
fn stirling(z: f64) -> f64 {
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 * (1.0 / 1188.0)))));
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series
}

/// Digamma function for `x > 0`, by the same upward shift and the
/// asymptotic series.
pub fn digamma(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut z = x;
    while z < SHIFT {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    acc + z.ln() - 0.5 * inv - series
}
