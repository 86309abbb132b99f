//! Detectors for the DD-domain OTFS frame.
//!
//! * [`spa`]: symbol-wise MAP by sum-product message passing and its hybrid
//!   MAP / parallel-interference-cancellation variant.
//! * [`crossdomain`]: TD L-MMSE estimation iterated with DD symbol detection.
//! * [`se`]: state-evolution predictor for the cross-domain detector.
//! * [`baseline`]: linear MMSE and MRC comparators.

pub mod baseline;
pub mod crossdomain;
pub mod se;
pub mod spa;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::Constellation;
use crate::C64;

pub use baseline::{mmse_baseline, mrc_baseline};
pub use crossdomain::{
    cross_domain_detect, cross_domain_trace, dd_symbol_detect, extrinsic, lmmse_estimate,
    lmmse_extrinsic, CrossDomainOptions, SymbolPosterior,
};
pub use se::{mse_eta, state_evolution, SeInput, SymbolModel};
pub use spa::{effective_sinr, hybrid_map_pic_detect, map_spa_detect, FactorGraph, HybridOptions};

/// Smallest variance kept in any message.
pub const VAR_FLOOR: f64 = 1e-12;
/// Variance assigned when a message carries no information.
pub const VAR_CAP: f64 = 1e6;

/// Independent complex Gaussian beliefs with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMessage {
    pub mean: Vec<C64>,
    pub variance: Vec<f64>,
}

impl GaussianMessage {
    /// Checks lengths and clamps variances into `[VAR_FLOOR, VAR_CAP]`.
    pub fn new(mean: Vec<C64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::dim(format!(
                "mean has {} entries, variance {}",
                mean.len(),
                variance.len()
            )));
        }
        if variance.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN variance".into()));
        }
        let variance = variance.into_iter().map(clamp_var).collect();
        Ok(Self { mean, variance })
    }

    /// Zero mean, common variance.
    pub fn isotropic(len: usize, variance: f64) -> Self {
        Self {
            mean: vec![C64::new(0.0, 0.0); len],
            variance: vec![clamp_var(variance); len],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean_variance(&self) -> f64 {
        self.variance.iter().sum::<f64>() / self.len().max(1) as f64
    }
}

pub(crate) fn clamp_var(v: f64) -> f64 {
    v.clamp(VAR_FLOOR, VAR_CAP)
}

/// Output of every detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Hard decisions, one constellation index per DD symbol.
    pub hard: Vec<usize>,
    /// Row `i` is the posterior distribution of symbol `i` over the constellation.
    pub posteriors: Vec<Vec<f64>>,
    pub iterations_run: usize,
    /// TD-domain MSE per iteration when the transmitted frame was supplied.
    pub per_iteration_mse: Vec<f64>,
}

impl DetectionResult {
    pub(crate) fn from_posteriors(posteriors: Vec<Vec<f64>>, iterations_run: usize) -> Self {
        let hard = posteriors.iter().map(|p| argmax(p)).collect();
        Self {
            hard,
            posteriors,
            iterations_run,
            per_iteration_mse: Vec::new(),
        }
    }

    /// Number of hard decisions that differ from `truth`.
    pub fn symbol_errors(&self, truth: &[usize]) -> usize {
        self.hard.iter().zip(truth).filter(|(a, b)| a != b).count()
    }

    /// Number of bit errors; symbol indices are their own bit labels.
    pub fn bit_errors(&self, truth: &[usize]) -> usize {
        self.hard
            .iter()
            .zip(truth)
            .map(|(&a, &b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

/// State-evolution trace.
///
/// `v_td[l]` is the TD a-priori variance entering iteration `l` (length
/// `iters + 1`); `v_dd[l]` and `eta_dd[l] = 1 / v_dd[l]` have length `iters`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateTrace {
    pub v_td: Vec<f64>,
    pub v_dd: Vec<f64>,
    pub eta_dd: Vec<f64>,
    /// Iterations where an intermediate variance had to be clamped.
    pub clamped: Vec<usize>,
}

/// Index of the largest entry; the lowest index wins ties.
pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Normalises log-weights into probabilities in place.
pub(crate) fn softmax_in_place(w: &mut [f64]) {
    let mx = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        let u = 1.0 / w.len() as f64;
        w.iter_mut().for_each(|v| *v = u);
        return;
    }
    let mut s = 0.0;
    for v in w.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    w.iter_mut().for_each(|v| *v /= s);
}

/// Gaussian posteriors around per-symbol estimates, used by the linear baselines.
pub(crate) fn gaussian_posteriors(est: &[C64], var: f64, c: Constellation) -> Vec<Vec<f64>> {
    let pts = c.points();
    est.iter()
        .map(|&y| {
            let mut w: Vec<f64> = pts.iter().map(|a| -(y - a).norm_sqr() / var).collect();
            softmax_in_place(&mut w);
            w
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_clamps_variance() {
        let m = GaussianMessage::new(vec![C64::new(1.0, 0.0); 2], vec![0.0, 1e9]).unwrap();
        assert_eq!(m.variance, vec![VAR_FLOOR, VAR_CAP]);
        assert!(GaussianMessage::new(vec![C64::new(0.0, 0.0)], vec![]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.6, 0.3]), 1);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut w = vec![-1000.0, -1001.0, -2000.0];
        softmax_in_place(&mut w);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > w[1] && w[1] > w[2]);
    }
}
