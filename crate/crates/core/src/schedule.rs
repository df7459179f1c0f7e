//! Step sizes of the two-timescale iteration.

use crate::error::{invalid, Result};
use crate::Scalar;

/// `alpha(n) = 1 / ceil(n / alpha_scale)` for the value updates and
/// `beta(n) = 1 / (1 + ceil(n ln n / beta_scale))` on every
/// `beta_period`-th step (zero otherwise) for the index updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub alpha_scale: f64,
    pub beta_scale: f64,
    pub beta_period: u64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            alpha_scale: 5000.0,
            beta_scale: 5000.0,
            beta_period: 50,
        }
    }
}

impl StepSchedule {
    pub fn alpha<F: Scalar>(&self, n: u64) -> Result<F> {
        if n == 0 {
            return Err(invalid("step counter starts at 1"));
        }
        Ok(F::lit(1.0 / (n as f64 / self.alpha_scale).ceil()))
    }

    /// Natural logarithm. Zero for `n = 0` and off-period steps.
    pub fn beta<F: Scalar>(&self, n: u64) -> F {
        if n == 0 || !n.is_multiple_of(self.beta_period) {
            return F::zero();
        }
        let nf = n as f64;
        F::lit(1.0 / (1.0 + (nf * nf.ln() / self.beta_scale).ceil()))
    }
}

/// [`StepSchedule::alpha`] with the default constants.
pub fn alpha<F: Scalar>(n: u64) -> Result<F> {
    StepSchedule::default().alpha(n)
}

/// [`StepSchedule::beta`] with the default constants.
pub fn beta<F: Scalar>(n: u64) -> F {
    StepSchedule::default().beta(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_values() {
        assert_eq!(alpha::<f64>(1).unwrap(), 1.0);
        assert_eq!(alpha::<f64>(5000).unwrap(), 1.0);
        assert_eq!(alpha::<f64>(5001).unwrap(), 0.5);
        assert!((alpha::<f64>(12000).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(alpha::<f64>(0).is_err());
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta::<f64>(51), 0.0);
        assert_eq!(beta::<f64>(50), 0.5);
        assert!((beta::<f64>(5000) - 0.1).abs() < 1e-15);
        assert_eq!(beta::<f64>(0), 0.0);
    }

    #[test]
    fn two_timescale_separation() {
        let mut prev = f64::INFINITY;
        for n in 1..2_000_000u64 {
            let a = alpha::<f64>(n).unwrap();
            assert!(a <= prev);
            prev = a;
            let b = beta::<f64>(n);
            if n >= 50 && b != 0.0 {
                assert!(b <= a, "n = {n}");
            }
        }
    }
}
