//! Log-gamma, digamma and trigamma on the positive real axis.
//!
//! All three use the same scheme: shift the argument upward with the
//! functional recurrence until it is at least [`ASYMPTOTIC_THRESHOLD`], then
//! evaluate the Stirling-type asymptotic series. Negative arguments are not
//! supported.

use crate::error::{Error, Result};

const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

/// `0.5 * ln(2π)`
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Bernoulli numbers B_2, B_4, ..., B_20.
const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// A strictly positive, finite real number.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PositiveReal(f64);

impl PositiveReal {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!(
                "expected a positive finite real, got {value}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PositiveReal {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

/// Smallest integer shift `n` such that `x + n >= ASYMPTOTIC_THRESHOLD`.
fn shift_count(x: f64) -> usize {
    if x >= ASYMPTOTIC_THRESHOLD {
        0
    } else {
        (ASYMPTOTIC_THRESHOLD - x).ceil() as usize
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: PositiveReal) -> f64 {
    let x = x.get();
    let n = shift_count(x);
    // ln Γ(x) = ln Γ(x + n) - ln(x (x+1) ... (x+n-1))
    let mut prod = 1.0;
    let mut log_correction = 0.0;
    for k in 0..n {
        prod *= x + k as f64;
        // keep the running product well inside f64 range
        if prod > 1e280 {
            log_correction += prod.ln();
            prod = 1.0;
        }
    }
    log_correction += prod.ln();
    let z = x + n as f64;

    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv;
    for (i, b) in BERNOULLI_EVEN.iter().enumerate() {
        let k = (i + 1) as f64;
        series += b / (2.0 * k * (2.0 * k - 1.0)) * pow;
        pow *= inv2;
    }
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series - log_correction
}

/// Digamma ψ(x) = d/dx ln Γ(x) for `x > 0`.
pub fn digamma(x: PositiveReal) -> f64 {
    let x = x.get();
    let n = shift_count(x);
    let mut shift_sum = 0.0;
    for k in (0..n).rev() {
        shift_sum += 1.0 / (x + k as f64);
    }
    let z = x + n as f64;

    let inv2 = 1.0 / (z * z);
    let mut series = 0.0;
    let mut pow = inv2;
    for (i, b) in BERNOULLI_EVEN.iter().enumerate() {
        let k = (i + 1) as f64;
        series += b / (2.0 * k) * pow;
        pow *= inv2;
    }
    z.ln() - 0.5 / z - series - shift_sum
}

/// Trigamma ψ₁(x) = d²/dx² ln Γ(x) for `x > 0`.
pub fn trigamma(x: PositiveReal) -> f64 {
    let x = x.get();
    let n = shift_count(x);
    let mut shift_sum = 0.0;
    for k in (0..n).rev() {
        let t = x + k as f64;
        shift_sum += 1.0 / (t * t);
    }
    let z = x + n as f64;

    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv2 * inv;
    for b in BERNOULLI_EVEN.iter() {
        series += b * pow;
        pow *= inv2;
    }
    inv + 0.5 * inv2 + series + shift_sum
}

/// Checked variants taking raw `f64`; non-positive input is a domain error.
pub fn try_log_gamma(x: f64) -> Result<f64> {
    PositiveReal::new(x).map(log_gamma)
}

pub fn try_digamma(x: f64) -> Result<f64> {
    PositiveReal::new(x).map(digamma)
}

pub fn try_trigamma(x: f64) -> Result<f64> {
    PositiveReal::new(x).map(trigamma)
}

// Internal shorthands for call sites that have already validated positivity.
pub(crate) fn lgamma(x: f64) -> f64 {
    log_gamma(PositiveReal(x))
}

pub(crate) fn psi(x: f64) -> f64 {
    digamma(PositiveReal(x))
}

pub(crate) fn psi1(x: f64) -> f64 {
    trigamma(PositiveReal(x))
}

/// `ln B(a, b)`
pub(crate) fn log_beta(a: f64, b: f64) -> f64 {
    lgamma(a) + lgamma(b) - lgamma(a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    fn p(x: f64) -> PositiveReal {
        PositiveReal::new(x).unwrap()
    }

    // ln Γ(n + 1/2) = ln( (2n)! / (4^n n!) * sqrt(pi) ), evaluated as a sum of logs
    fn log_gamma_half_integer_oracle(n: u32) -> f64 {
        let mut acc = 0.5 * PI.ln();
        for k in 0..n {
            acc += (k as f64 + 0.5).ln();
        }
        acc
    }

    // ψ(n + 1/2) = -γ - 2 ln 2 + Σ_{k=1}^{n} 2/(2k-1)
    fn digamma_half_integer_oracle(n: u32) -> f64 {
        let mut acc = -EULER_GAMMA - 2.0 * 2f64.ln();
        for k in 1..=n {
            acc += 2.0 / (2.0 * k as f64 - 1.0);
        }
        acc
    }

    #[test]
    fn rejects_non_positive() {
        assert!(PositiveReal::new(0.0).is_err());
        assert!(PositiveReal::new(-1.0).is_err());
        assert!(PositiveReal::new(f64::NAN).is_err());
        assert!(try_log_gamma(0.0).is_err());
        assert!(try_digamma(-2.5).is_err());
        assert!(try_trigamma(0.0).is_err());
    }

    #[test]
    fn log_gamma_known_values() {
        assert!(log_gamma(p(1.0)).abs() <= 1e-12);
        assert!(log_gamma(p(2.0)).abs() <= 1e-12);
        let oracle = log_gamma_half_integer_oracle(5);
        assert!((log_gamma(p(5.5)) - oracle).abs() <= 1e-12);
        // ln(10!) for Γ(11)
        let ln_fact10: f64 = (1..=10).map(|k| (k as f64).ln()).sum();
        assert!((log_gamma(p(11.0)) - ln_fact10).abs() <= 1e-12);
        assert!((log_gamma(p(0.5)) - 0.5 * PI.ln()).abs() <= 1e-12);
    }

    #[test]
    fn log_gamma_small_and_large_arguments() {
        // Γ(x) ~ 1/x - γ as x -> 0
        let x: f64 = 1e-6;
        let expected = -(x.ln()) - EULER_GAMMA * x;
        assert!((log_gamma(p(x)) - expected).abs() <= 1e-11);
        // relative accuracy at the top of the range
        let x = 1e6;
        let stirling = (x - 0.5) * f64::ln(x) - x + HALF_LN_2PI + 1.0 / (12.0 * x);
        assert!(((log_gamma(p(x)) - stirling) / stirling).abs() <= 1e-15);
    }

    #[test]
    fn digamma_known_values() {
        assert!((digamma(p(1.0)) + EULER_GAMMA).abs() <= 1e-12);
        assert!((digamma(p(2.0)) - (digamma(p(1.0)) + 1.0)).abs() <= 1e-12);
        assert!((digamma(p(10.5)) - digamma_half_integer_oracle(10)).abs() <= 1e-12);
        assert!((digamma(p(0.5)) - digamma_half_integer_oracle(0)).abs() <= 1e-12);
        // ψ(x) ~ -1/x - γ near zero
        let x = 1e-6;
        assert!((digamma(p(x)) - (-1.0 / x - EULER_GAMMA)).abs() <= 1e-5);
    }

    #[test]
    fn trigamma_known_values() {
        let basel = PI * PI / 6.0;
        assert!(((trigamma(p(1.0)) - basel) / basel).abs() <= 1e-12);
        assert!((trigamma(p(2.0)) - (trigamma(p(1.0)) - 1.0)).abs() <= 1e-12);
        let half = PI * PI / 2.0;
        assert!(((trigamma(p(0.5)) - half) / half).abs() <= 1e-12);
    }

    #[test]
    fn recurrences_hold_on_grid() {
        let mut x = 0.5;
        while x <= 100.0 {
            let d = digamma(p(x + 1.0)) - digamma(p(x)) - 1.0 / x;
            assert!(d.abs() <= 1e-10, "digamma recurrence at {x}: {d}");
            let t = trigamma(p(x + 1.0)) - trigamma(p(x)) + 1.0 / (x * x);
            assert!(t.abs() <= 1e-10, "trigamma recurrence at {x}: {t}");
            x += 0.37;
        }
    }

    #[test]
    fn monotonicity_and_positivity() {
        let grid: Vec<f64> = (1..2000).map(|i| i as f64 * 0.05).collect();
        for w in grid.windows(2) {
            assert!(digamma(p(w[1])) > digamma(p(w[0])));
            assert!(trigamma(p(w[0])) > 0.0);
        }
    }

    #[test]
    fn finite_difference_consistency() {
        let h = 1e-5;
        for &x in &[0.3, 1.0, 2.5, 7.0, 13.0, 58.0, 144.0] {
            let fd = (log_gamma(p(x + h)) - log_gamma(p(x - h))) / (2.0 * h);
            assert!((fd - digamma(p(x))).abs() <= 1e-7, "x={x}");
            let fd2 = (digamma(p(x + h)) - digamma(p(x - h))) / (2.0 * h);
            assert!((fd2 - trigamma(p(x))).abs() <= 1e-6 * trigamma(p(x)).max(1.0), "x={x}");
        }
    }
}
