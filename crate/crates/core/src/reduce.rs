//! Order-independent summation.

const FRAC_SCALE: f64 = (1u64 << 60) as f64;

/// Fixed-point accumulator whose result does not depend on the order in
/// which terms are added. Each term is split into its integer part and a
/// fraction truncated to 2^-60, and both parts are summed as integers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactSum {
    int: i64,
    frac: i128,
    non_finite: bool,
}

impl ExactSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        if !x.is_finite() || x.abs() >= 9.0e18 {
            self.non_finite = true;
            return;
        }
        let whole = x.trunc();
        self.int += whole as i64;
        self.frac += ((x - whole) * FRAC_SCALE) as i64 as i128;
    }

    pub fn merge(mut self, other: ExactSum) -> ExactSum {
        self.int += other.int;
        self.frac += other.frac;
        self.non_finite |= other.non_finite;
        self
    }

    pub fn value(&self) -> f64 {
        if self.non_finite {
            return f64::NAN;
        }
        let carry = self.frac.div_euclid(FRAC_SCALE as i128);
        let rest = self.frac.rem_euclid(FRAC_SCALE as i128);
        (self.int as i128 + carry) as f64 + rest as f64 / FRAC_SCALE
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 * 0.013 - 6.1).collect();
        let s: ExactSum = xs.iter().copied().collect();
        let naive: f64 = xs.iter().sum();
        assert!((s.value() - naive).abs() < 1e-9);
    }

    #[test]
    fn order_does_not_matter() {
        let xs: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() * 1e3 / (i as f64 + 1.0)).collect();
        let fwd: ExactSum = xs.iter().copied().collect();
        let rev: ExactSum = xs.iter().rev().copied().collect();
        assert_eq!(fwd.value().to_bits(), rev.value().to_bits());
        let (a, b) = xs.split_at(123);
        let split = a.iter().copied().collect::<ExactSum>().merge(b.iter().copied().collect());
        assert_eq!(fwd.value().to_bits(), split.value().to_bits());
    }

    #[test]
    fn non_finite_poisons() {
        let s: ExactSum = [1.0, f64::INFINITY].into_iter().collect();
        assert!(s.value().is_nan());
    }
}
