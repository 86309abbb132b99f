//! State evolution of the cross-domain detector.
//!
//! The TD a-priori variance `v_T(l)` is mapped to the TD a-posteriori variance
//! by the L-MMSE trace formula, to the DD a-priori variance
//! `v_DD = (1/v_p - 1/v_T)^{-1}`, through the symbol-detector MSE at SNR
//! `eta_DD = 1/v_DD`, and back to `v_T(l+1) = (1/MSE - 1/v_DD)^{-1}`.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, TdOperator};
use crate::error::{Error, Result};
use crate::linalg::ProfileCholesky;
use crate::modem::Constellation;
use crate::C64;

use super::{softmax_in_place, StateTrace, VAR_CAP, VAR_FLOOR};

/// Default Monte Carlo sample count for `MSE(eta)`.
pub const DEFAULT_MC_SAMPLES: usize = 200_000;

/// Grid step of the cached `MSE(eta)` table in dB.
const GRID_DB: f64 = 0.1;

/// Symbol alphabet assumed by the DD detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolModel {
    Constellation(Constellation),
    /// Unconstrained Gaussian symbols, for which `MSE(eta) = 1/eta`.
    Gaussian,
}

/// What the predictor knows about the channel.
#[derive(Debug, Clone)]
pub enum SeInput {
    /// Eigenvalues of `G = H H^H`.
    Spectrum(Vec<f64>),
    /// The TD channel itself; the posterior variance is evaluated from the trace.
    Channel(TdOperator<f64>),
}

impl SeInput {
    fn dim(&self) -> usize {
        match self {
            SeInput::Spectrum(l) => l.len(),
            SeInput::Channel(h) => h.dim(),
        }
    }

    /// `(a, s)` with `s = (1/MN) sum_k v lambda_k / (v lambda_k + n0)` and
    /// `a = 1 - s`, each evaluated without cancellation where possible.
    fn fractions(&self, v: f64, n0: f64) -> Result<(f64, f64)> {
        let mn = self.dim() as f64;
        match self {
            SeInput::Spectrum(lambda) => {
                let s = lambda.iter().map(|&l| v * l / (v * l + n0)).sum::<f64>() / mn;
                let a = lambda.iter().map(|&l| n0 / (v * l + n0)).sum::<f64>() / mn;
                Ok((a, s))
            }
            SeInput::Channel(h) => {
                let chol = ProfileCholesky::factor(h.dim(), &scaled_gram(h, v, n0))?;
                let mut buf = vec![C64::new(0.0, 0.0); h.dim()];
                let mut tr = 0.0;
                for j in 0..h.dim() {
                    buf.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
                    for (r, c) in h.column(j) {
                        buf[r] += c;
                    }
                    tr += chol.quad_form(&buf);
                }
                let s = v * tr / mn;
                Ok((1.0 - s, s))
            }
        }
    }

    /// Average TD a-posteriori variance `v_p = v - (v^2/MN) Tr(H^H (v G + n0 I)^{-1} H)`
    /// for a common prior variance `v`.
    pub fn posterior_variance(&self, v: f64, n0: f64) -> Result<f64> {
        Ok(v * self.fractions(v, n0)?.0)
    }

    /// DD a-priori variance `(1/v_p - 1/v)^{-1} = v a / s`.
    pub fn dd_variance(&self, v: f64, n0: f64) -> Result<f64> {
        let (a, s) = self.fractions(v, n0)?;
        Ok(if s > 0.0 { v * a / s } else { f64::INFINITY })
    }
}

/// Lower-triangular entries of `v H H^H + n0 I`.
fn scaled_gram(h: &TdOperator<f64>, v: f64, n0: f64) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for j in 0..h.dim() {
        let col = h.column(j);
        for (a, &(ra, va)) in col.iter().enumerate() {
            for &(rb, vb) in &col[..=a] {
                let x = va * vb.conj() * v;
                if ra >= rb {
                    out.push((ra, rb, x));
                } else {
                    out.push((rb, ra, x.conj()));
                }
            }
        }
    }
    for i in 0..h.dim() {
        out.push((i, i, C64::new(n0, 0.0)));
    }
    out
}

/// Eigenvalues of `G = H H^H` by a dense Hermitian eigen-decomposition.
pub fn gram_eigenvalues(h: &TdOperator<f64>) -> Result<Vec<f64>> {
    if h.dim() > 4096 {
        return Err(Error::Complexity(format!(
            "dense eigen-decomposition of a {0}x{0} matrix",
            h.dim()
        )));
    }
    let hd = h.to_dense().to_nalgebra();
    let g = &hd * hd.adjoint();
    let eig = SymmetricEigen::new(g);
    Ok(eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect())
}

type MseKey = (Constellation, usize, i64);

fn mse_cache() -> &'static RwLock<HashMap<MseKey, f64>> {
    static CACHE: OnceLock<RwLock<HashMap<MseKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Monte Carlo `E|x - E[x | x + xi]|^2` with `xi ~ CN(0, 1/eta)`.
///
/// The estimator averages the posterior variance, which has the same mean as
/// the squared error and a smaller spread.
fn mse_monte_carlo(c: Constellation, eta: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = c.points();
    let v = 1.0 / eta;
    let mut w = vec![0.0; pts.len()];
    let mut acc = 0.0;
    for _ in 0..samples {
        let x = pts[rng.random_range(0..pts.len())];
        let y = x + complex_gaussian(&mut rng, v);
        for (wi, a) in w.iter_mut().zip(&pts) {
            *wi = (2.0 * (a.conj() * y).re - a.norm_sqr()) / v;
        }
        softmax_in_place(&mut w);
        let mu: C64 = w.iter().zip(&pts).map(|(p, a)| a * *p).sum();
        let second: f64 = w.iter().zip(&pts).map(|(p, a)| p * a.norm_sqr()).sum();
        acc += (second - mu.norm_sqr()).max(0.0);
    }
    acc / samples as f64
}

fn grid_value(c: Constellation, samples: usize, g: i64) -> f64 {
    let key = (c, samples, g);
    if let Some(&v) = mse_cache().read().expect("cache lock").get(&key) {
        return v;
    }
    let eta = 10f64.powf(g as f64 * GRID_DB / 10.0);
    let seed =
        (c.order() as u64) << 48 ^ (g as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ samples as u64;
    let v = mse_monte_carlo(c, eta, samples, seed);
    mse_cache().write().expect("cache lock").insert(key, v);
    v
}

/// `MSE(eta)` of the DD symbol detector, interpolated linearly in `log eta`
/// between cached Monte Carlo grid points.
pub fn mse_eta(model: SymbolModel, eta: f64, samples: usize) -> f64 {
    match model {
        SymbolModel::Gaussian => 1.0 / eta,
        SymbolModel::Constellation(c) => {
            let db = 10.0 * eta.log10() / GRID_DB;
            let lo = db.floor();
            let t = db - lo;
            let a = grid_value(c, samples, lo as i64);
            if t == 0.0 {
                return a;
            }
            let b = grid_value(c, samples, lo as i64 + 1);
            a + t * (b - a)
        }
    }
}

/// Predicted variance trace over `iters` iterations.
///
/// When the symbol detector returns no information (`MSE >= v_DD`) the TD
/// prior reverts to the symbol energy, as at initialisation, and the iteration
/// is flagged in `clamped`.
pub fn state_evolution(
    input: &SeInput,
    model: SymbolModel,
    n0: f64,
    iters: usize,
    mc_samples: usize,
) -> Result<StateTrace> {
    if !(n0 > 0.0) {
        return Err(Error::param("state evolution needs n0 > 0"));
    }
    if mc_samples == 0 {
        return Err(Error::param("mc_samples must be positive"));
    }
    let es = match model {
        SymbolModel::Constellation(c) => c.energy(),
        SymbolModel::Gaussian => 1.0,
    };
    let mut trace = StateTrace {
        v_td: vec![es],
        v_dd: Vec::new(),
        eta_dd: Vec::new(),
        clamped: Vec::new(),
    };
    let mut v_a = es;
    for l in 0..iters {
        let raw = input.dd_variance(v_a, n0)?;
        let v_dd = if raw.is_finite() && raw > 0.0 && raw < VAR_CAP {
            raw.max(VAR_FLOOR)
        } else {
            trace.clamped.push(l);
            VAR_CAP
        };
        trace.v_dd.push(v_dd);
        trace.eta_dd.push(1.0 / v_dd);
        let mse = mse_eta(model, 1.0 / v_dd, mc_samples);
        v_a = if mse < v_dd {
            (1.0 / (1.0 / mse - 1.0 / v_dd)).clamp(VAR_FLOOR, VAR_CAP)
        } else {
            if trace.clamped.last() != Some(&l) {
                trace.clamped.push(l);
            }
            es
        };
        trace.v_td.push(v_a);
    }
    Ok(trace)
}
