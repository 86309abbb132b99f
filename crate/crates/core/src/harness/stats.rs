//! Monte Carlo estimators and their 95% confidence half-widths.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

/// Two-sided 95% standard-normal quantile.
pub fn z95() -> f64 {
    Normal::standard().inverse_cdf(0.975)
}

/// Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Wilson score interval for `k` successes in `n` trials, as `(centre, half-width)`.
pub fn wilson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let z = z95();
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    (centre, half)
}

/// Streaming mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Normal-approximation 95% half-width of the mean.
    pub fn ci95(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        z95() * (self.variance() / self.n as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_matches_closed_form() {
        // k = 0: centre z^2/(2(n+z^2)), half-width equal to it.
        let (c, h) = wilson(0, 100);
        let z2 = z95() * z95();
        assert!((c - z2 / (2.0 * (100.0 + z2))).abs() < 1e-12);
        assert!((c - h).abs() < 1e-12);
        // Large n approaches the Wald interval.
        let (c, h) = wilson(50_000, 100_000);
        assert!((c - 0.5).abs() < 1e-9);
        assert!((h - 1.959964 * (0.25f64 / 1e5).sqrt()).abs() < 1e-6);
        assert_eq!(wilson(0, 0), (0.0, 0.0));
    }

    #[test]
    fn q_function_values() {
        // References from a double-precision erfc; statrs is good to about 1e-11.
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        assert!((q_function(1.0) / 0.158_655_253_931_457_07 - 1.0).abs() < 1e-9);
        assert!((q_function(3.0) / 1.349_898_031_630_095_6e-3 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn moments_match_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25];
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((m.mean() - mean).abs() < 1e-12);
        assert!((m.variance() - var).abs() < 1e-12);
    }
}
