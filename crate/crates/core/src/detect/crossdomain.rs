//! Cross-domain iterative detection.
//!
//! Module A runs L-MMSE estimation of the TD frame `z = (F_N^H (x) I_M) x`
//! against the TD channel; module B detects the DD symbols one at a time. The
//! two exchange extrinsic Gaussian messages through the unitary DD/TD map.

use crate::channel::TdOperator;
use crate::error::{Error, Result};
use crate::linalg::ProfileCholesky;
use crate::modem::Constellation;
use crate::transforms::{doppler_fft, doppler_ifft, Domain, DomainVector};
use crate::C64;

use super::{
    clamp_var, softmax_in_place, DetectionResult, GaussianMessage, StateTrace, VAR_CAP, VAR_FLOOR,
};

/// `H C H^H + n0 I` as lower-triangular profile entries.
fn normal_matrix(h: &TdOperator<f64>, c: &[f64], n0: f64) -> Vec<(usize, usize, C64)> {
    let mn = h.dim();
    let taps = h.taps().len();
    let mut entries = Vec::with_capacity(mn * (taps * (taps + 1) / 2 + 1));
    for (j, &cj) in c.iter().enumerate() {
        let col = h.column(j);
        for (a, &(ra, va)) in col.iter().enumerate() {
            for &(rb, vb) in &col[..=a] {
                let v = va * vb.conj() * cj;
                if ra >= rb {
                    entries.push((ra, rb, v));
                } else {
                    entries.push((rb, ra, v.conj()));
                }
            }
        }
    }
    for i in 0..mn {
        entries.push((i, i, C64::new(n0, 0.0)));
    }
    entries
}

/// `b = H^H A^{-1} (r - H m_a)` and `q_i = h_i^H A^{-1} h_i` with
/// `A = H C_a H^H + n0 I`, factored over its (cyclically banded) envelope.
fn lmmse_parts(
    r: &[C64],
    h: &TdOperator<f64>,
    prior: &GaussianMessage,
    n0: f64,
) -> Result<(Vec<C64>, Vec<f64>)> {
    let mn = h.dim();
    if r.len() != mn || prior.len() != mn {
        return Err(Error::dim(format!(
            "observation {} / prior {} / channel {mn}",
            r.len(),
            prior.len()
        )));
    }
    if !(n0 >= 0.0) {
        return Err(Error::param(format!(
            "noise variance {n0} must be non-negative"
        )));
    }
    let chol = ProfileCholesky::factor(mn, &normal_matrix(h, &prior.variance, n0))?;
    let hm = h.apply(&prior.mean);
    let resid: Vec<C64> = r.iter().zip(&hm).map(|(a, b)| a - b).collect();
    let b = h.apply_adjoint(&chol.solve(&resid));
    let mut buf = vec![C64::new(0.0, 0.0); mn];
    let q = (0..mn)
        .map(|j| {
            buf.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for (row, v) in h.column(j) {
                buf[row] += v;
            }
            chol.quad_form(&buf)
        })
        .collect();
    Ok((b, q))
}

/// L-MMSE estimate of the TD frame given a Gaussian prior.
///
/// `m_p = m_a + C_a H^H (H C_a H^H + n0 I)^{-1} (r - H m_a)`; only the diagonal
/// `c_i - c_i^2 h_i^H (H C_a H^H + n0 I)^{-1} h_i` of the posterior covariance is kept.
pub fn lmmse_estimate(
    r: &[C64],
    h: &TdOperator<f64>,
    prior: &GaussianMessage,
    n0: f64,
) -> Result<GaussianMessage> {
    let (b, q) = lmmse_parts(r, h, prior, n0)?;
    let mean = prior
        .mean
        .iter()
        .zip(&b)
        .zip(&prior.variance)
        .map(|((m, b), c)| m + b * *c)
        .collect();
    let variance = prior
        .variance
        .iter()
        .zip(&q)
        .map(|(c, q)| c - c * c * q)
        .collect();
    GaussianMessage::new(mean, variance)
}

/// Extrinsic output of [`lmmse_estimate`], `m_e = m_a + b_i / q_i` and
/// `v_e = 1/q_i - c_i`.
///
/// Algebraically equal to `extrinsic(lmmse_estimate(..), prior)`, but free of the
/// cancellation that division suffers once the prior is sharp.
pub fn lmmse_extrinsic(
    r: &[C64],
    h: &TdOperator<f64>,
    prior: &GaussianMessage,
    n0: f64,
) -> Result<GaussianMessage> {
    let (b, q) = lmmse_parts(r, h, prior, n0)?;
    let (mean, variance) = prior
        .mean
        .iter()
        .zip(&prior.variance)
        .zip(b.iter().zip(&q))
        .map(|((&ma, &c), (&bi, &qi))| {
            let ve = 1.0 / qi - c;
            if !(qi > 0.0) || !(ve < VAR_CAP) {
                return (ma + bi * c, VAR_CAP);
            }
            (ma + bi / qi, ve.max(VAR_FLOOR))
        })
        .unzip();
    Ok(GaussianMessage { mean, variance })
}

/// Gaussian division `post / prior`, entrywise.
///
/// Where the posterior is not measurably more informative than the prior, or
/// the extrinsic variance would exceed `VAR_CAP`, the result falls back to the
/// posterior mean with variance `VAR_CAP`.
pub fn extrinsic(post: &GaussianMessage, prior: &GaussianMessage) -> GaussianMessage {
    let (mean, variance) = post
        .mean
        .iter()
        .zip(&post.variance)
        .zip(prior.mean.iter().zip(&prior.variance))
        .map(|((&mp, &vp), (&ma, &va))| {
            let ve = 1.0 / (1.0 / vp - 1.0 / va);
            // A gain below the relative resolution of the variances is noise.
            if va - vp <= 1e-9 * va || ve >= VAR_CAP {
                return (mp, VAR_CAP);
            }
            let ve = ve.max(VAR_FLOOR);
            (ve * (mp / vp - ma / va), ve)
        })
        .unzip();
    GaussianMessage { mean, variance }
}

/// Per-symbol output of the DD detector.
#[derive(Debug, Clone)]
pub struct SymbolPosterior {
    pub posteriors: Vec<Vec<f64>>,
    pub mean: Vec<C64>,
    pub variance: Vec<f64>,
}

/// Symbol-by-symbol DD detection from `m_x^a[k]` observed with variance `v[k]`.
///
/// The likelihood of hypothesis `x` is `exp((2 Re{x^* m} - |x|^2) / v)`.
pub fn dd_symbol_detect(
    m_x_a: &[C64],
    v: &[f64],
    constellation: Constellation,
) -> Result<SymbolPosterior> {
    if m_x_a.len() != v.len() {
        return Err(Error::dim(format!(
            "{} means, {} variances",
            m_x_a.len(),
            v.len()
        )));
    }
    let pts = constellation.points();
    let mut posteriors = Vec::with_capacity(v.len());
    let mut mean = Vec::with_capacity(v.len());
    let mut variance = Vec::with_capacity(v.len());
    for (&m, &vk) in m_x_a.iter().zip(v) {
        let vk = vk.max(VAR_FLOOR);
        let mut w: Vec<f64> = pts
            .iter()
            .map(|a| (2.0 * (a.conj() * m).re - a.norm_sqr()) / vk)
            .collect();
        softmax_in_place(&mut w);
        let mu: C64 = w.iter().zip(&pts).map(|(p, a)| a * *p).sum();
        let second: f64 = w.iter().zip(&pts).map(|(p, a)| p * a.norm_sqr()).sum();
        mean.push(mu);
        variance.push((second - mu.norm_sqr()).max(0.0));
        posteriors.push(w);
    }
    Ok(SymbolPosterior {
        posteriors,
        mean,
        variance,
    })
}

/// Options for [`cross_domain_detect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossDomainOptions {
    /// Number of A/B iterations `L_max`.
    pub iterations: usize,
}

impl Default for CrossDomainOptions {
    fn default() -> Self {
        Self { iterations: 5 }
    }
}

/// Cross-domain iterative detection of the DD frame from the TD observation `r`.
///
/// `truth`, the transmitted DD symbols in delay-major order, enables the
/// per-iteration TD-domain MSE in the result.
pub fn cross_domain_detect(
    r: &DomainVector<f64>,
    h: &TdOperator<f64>,
    constellation: Constellation,
    n0: f64,
    opts: CrossDomainOptions,
    truth: Option<&[C64]>,
) -> Result<DetectionResult> {
    cross_domain_trace(r, h, constellation, n0, opts, truth).map(|(d, _)| d)
}

/// [`cross_domain_detect`] that also reports the detector's own variance trace:
/// `v_td[l]` is the mean TD prior variance entering iteration `l` and `v_dd[l]`
/// the mean DD prior variance of iteration `l`.
pub fn cross_domain_trace(
    r: &DomainVector<f64>,
    h: &TdOperator<f64>,
    constellation: Constellation,
    n0: f64,
    opts: CrossDomainOptions,
    truth: Option<&[C64]>,
) -> Result<(DetectionResult, StateTrace)> {
    if r.domain() != Domain::Td {
        return Err(Error::WrongDomain {
            expected: Domain::Td.to_string(),
            found: r.domain().to_string(),
        });
    }
    if opts.iterations == 0 {
        return Err(Error::param("at least one iteration is required"));
    }
    let (m, n) = (r.frame().m, r.frame().n);
    let mn = m * n;
    if h.dim() != mn {
        return Err(Error::dim(format!(
            "channel dimension {} vs frame {mn}",
            h.dim()
        )));
    }
    let z_true = match truth {
        Some(x) if x.len() != mn => {
            return Err(Error::dim("ground truth length differs from frame"))
        }
        Some(x) => {
            let mut z = x.to_vec();
            doppler_ifft(&mut z, m, n);
            Some(z)
        }
        None => None,
    };
    let mse = |est: &[C64]| -> Option<f64> {
        z_true.as_ref().map(|z| {
            z.iter()
                .zip(est)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                / mn as f64
        })
    };

    let mut prior = GaussianMessage::isotropic(mn, constellation.energy());
    let mut trace = StateTrace {
        v_td: vec![prior.mean_variance()],
        v_dd: Vec::new(),
        eta_dd: Vec::new(),
        clamped: Vec::new(),
    };
    let mut per_iteration_mse: Vec<f64> = mse(&prior.mean).into_iter().collect();
    let mut last = None;
    for it in 0..opts.iterations {
        // Module A.
        let ext_t = lmmse_extrinsic(r.as_slice(), h, &prior, n0)?;
        let v_dd = ext_t.mean_variance();
        trace.v_dd.push(v_dd);
        trace.eta_dd.push(1.0 / v_dd);
        // TD -> DD; the variance is handed over index by index.
        let mut m_x_a = ext_t.mean.clone();
        doppler_fft(&mut m_x_a, m, n);
        // Module B.
        let det = dd_symbol_detect(&m_x_a, &ext_t.variance, constellation)?;
        // DD -> TD with the averaged posterior variance.
        let mut m_z_p = det.mean.clone();
        doppler_ifft(&mut m_z_p, m, n);
        let v_avg = clamp_var(det.variance.iter().sum::<f64>() / mn as f64);
        let post_dd = GaussianMessage {
            mean: m_z_p,
            variance: vec![v_avg; mn],
        };
        prior = extrinsic(&post_dd, &ext_t);
        if prior.variance.iter().any(|&v| v >= VAR_CAP) {
            trace.clamped.push(it);
        }
        trace.v_td.push(prior.mean_variance());
        if let Some(e) = mse(&prior.mean) {
            per_iteration_mse.push(e);
        }
        last = Some(det);
    }
    let det = last.expect("at least one iteration");
    let mut result = DetectionResult::from_posteriors(det.posteriors, opts.iterations);
    result.per_iteration_mse = per_iteration_mse;
    Ok((result, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Path, PathSet};
    use crate::transforms::FrameParams;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_paths(
        rng: &mut ChaCha8Rng,
        m: usize,
        n: usize,
        p: usize,
        frac: bool,
    ) -> PathSet<f64> {
        let paths = (0..p)
            .map(|_| {
                let g = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.5;
                let nu = if frac {
                    rng.random_range(-(n as f64) / 2.0..n as f64 / 2.0)
                } else {
                    rng.random_range(-(n as i64) / 2..=n as i64 / 2) as f64
                };
                Path::new(g, rng.random_range(0..m), nu)
            })
            .collect();
        PathSet::new(FrameParams::grid(m, n), paths).unwrap()
    }

    fn msg(mean: &[f64], var: &[f64]) -> GaussianMessage {
        GaussianMessage::new(
            mean.iter().map(|&v| C64::new(v, -v)).collect(),
            var.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn lmmse_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let (m, n) = if trial % 2 == 0 { (2, 2) } else { (4, 2) };
            let paths = random_paths(&mut rng, m, n, 3, trial % 3 == 0);
            let op = paths.td_operator();
            let mn = m * n;
            let r: Vec<C64> = (0..mn)
                .map(|_| C64::new(rng.random(), rng.random()))
                .collect();
            let prior = GaussianMessage::new(
                (0..mn)
                    .map(|_| C64::new(rng.random(), rng.random()))
                    .collect(),
                (0..mn).map(|_| rng.random_range(0.2..2.0)).collect(),
            )
            .unwrap();
            let n0 = 0.3;
            let post = lmmse_estimate(&r, &op, &prior, n0).unwrap();

            let hd = op.to_dense().to_nalgebra();
            let ca = DMatrix::from_diagonal(&DVector::from_iterator(
                mn,
                prior.variance.iter().map(|&v| C64::new(v, 0.0)),
            ));
            let a = &hd * &ca * hd.adjoint() + DMatrix::identity(mn, mn) * C64::new(n0, 0.0);
            let ainv = a.try_inverse().unwrap();
            let gain = &ca * hd.adjoint() * &ainv;
            let ma = DVector::from_vec(prior.mean.clone());
            let mp = &ma + &gain * (DVector::from_vec(r.clone()) - &hd * &ma);
            let cp = &ca - &gain * &hd * &ca;
            for i in 0..mn {
                assert!((mp[i] - post.mean[i]).norm() < 1e-9);
                assert!((cp[(i, i)].re - post.variance[i]).abs() < 1e-9);
                assert!(post.variance[i] <= prior.variance[i] + 1e-15);
            }
        }
    }

    #[test]
    fn closed_form_extrinsic_matches_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let paths = random_paths(&mut rng, 4, 4, 3, true);
        let op = paths.td_operator();
        let r: Vec<C64> = (0..16)
            .map(|_| C64::new(rng.random(), rng.random()))
            .collect();
        let prior = GaussianMessage::new(
            (0..16)
                .map(|_| C64::new(rng.random(), rng.random()))
                .collect(),
            (0..16).map(|_| rng.random_range(0.2..2.0)).collect(),
        )
        .unwrap();
        let a = extrinsic(&lmmse_estimate(&r, &op, &prior, 0.1).unwrap(), &prior);
        let b = lmmse_extrinsic(&r, &op, &prior, 0.1).unwrap();
        for i in 0..16 {
            assert!((a.mean[i] - b.mean[i]).norm() < 1e-9 * (1.0 + b.mean[i].norm()));
            assert!((a.variance[i] - b.variance[i]).abs() < 1e-9 * b.variance[i]);
        }
    }

    #[test]
    fn lmmse_identity_limit() {
        let paths = PathSet::new(
            FrameParams::grid(4, 2),
            vec![Path::new(C64::new(1.0, 0.0), 0, 0.0)],
        )
        .unwrap();
        let r: Vec<C64> = (0..8).map(|i| C64::new(i as f64, 1.0)).collect();
        // The message constructor caps variances, so the proxy is built directly.
        let prior = GaussianMessage {
            mean: vec![C64::new(0.0, 0.0); 8],
            variance: vec![1e12; 8],
        };
        let n0 = 0.25;
        let post = lmmse_estimate(&r, &paths.td_operator(), &prior, n0).unwrap();
        for i in 0..8 {
            assert!((post.mean[i] - r[i]).norm() < 1e-9);
            assert!((post.variance[i] - n0).abs() < 1e-6);
        }
    }

    #[test]
    fn lmmse_singular_is_numeric_error() {
        // Two equal-gain paths at delays 0 and 1 with zero Doppler on a 2-sample
        // frame give a rank-one circulant.
        let paths = PathSet::new(
            FrameParams::grid(2, 1),
            vec![
                Path::new(C64::new(1.0, 0.0), 0, 0.0),
                Path::new(C64::new(1.0, 0.0), 1, 0.0),
            ],
        )
        .unwrap();
        let prior = GaussianMessage::isotropic(2, 1.0);
        let r = vec![C64::new(1.0, 0.0); 2];
        let out = lmmse_estimate(&r, &paths.td_operator(), &prior, 0.0);
        assert!(matches!(out, Err(Error::Numeric(_))), "{out:?}");
    }

    #[test]
    fn extrinsic_identities() {
        let prior = msg(&[0.0, 0.0], &[2.0, 1.0]);
        let post = msg(&[0.4, -0.2], &[1.0, 0.5]);
        let e = extrinsic(&post, &prior);
        assert!((e.variance[0] - 2.0).abs() < 1e-15);
        assert!((e.mean[0] - post.mean[0] * 2.0).norm() < 1e-15);
        // Gaussian product of extrinsic and prior returns the posterior.
        let prior = msg(&[0.3, -1.0], &[2.0, 0.7]);
        let e = extrinsic(&post, &prior);
        for i in 0..2 {
            let v = 1.0 / (1.0 / e.variance[i] + 1.0 / prior.variance[i]);
            let m = (e.mean[i] / e.variance[i] + prior.mean[i] / prior.variance[i]) * v;
            assert!((v - post.variance[i]).abs() < 1e-12);
            assert!((m - post.mean[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn extrinsic_clamp_path() {
        let prior = msg(&[0.1], &[1.0]);
        let post = msg(&[0.5], &[1.0]);
        let e = extrinsic(&post, &prior);
        assert_eq!(e.variance[0], VAR_CAP);
        assert_eq!(e.mean[0], post.mean[0]);
    }

    #[test]
    fn dd_detect_bpsk_logistic() {
        let out = dd_symbol_detect(&[C64::new(10.0, 0.0)], &[1.0], Constellation::Bpsk).unwrap();
        // p(+1) = (1 + tanh(2m/v)) / 2, so p(-1) = 1 / (1 + e^{4m/v}).
        let want = 1.0 / (1.0 + 40f64.exp());
        assert!((out.posteriors[0][1] - want).abs() < 1e-25);
        assert!((out.mean[0].re - (20.0f64).tanh()).abs() < 1e-15);
        assert!(out.variance[0] < 1e-15);

        for c in [Constellation::Bpsk, Constellation::Qpsk] {
            let out = dd_symbol_detect(&[C64::new(0.0, 0.0)], &[1.0], c).unwrap();
            let u = 1.0 / c.order() as f64;
            assert!(out.posteriors[0].iter().all(|p| (p - u).abs() < 1e-15));
            assert!(out.mean[0].norm() < 1e-15);
            assert!((out.variance[0] - 1.0).abs() < 1e-12);
        }
        // The -|x|^2 term favours inner 16-QAM points, but symmetry keeps the mean at 0.
        let out = dd_symbol_detect(&[C64::new(0.0, 0.0)], &[1.0], Constellation::Qam16).unwrap();
        assert!(out.mean[0].norm() < 1e-15);
        assert!(out.variance[0] < 1.0);
    }

    #[test]
    fn dd_detect_equal_variance_matches_forney_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for c in [Constellation::Qpsk, Constellation::Qam16] {
            let v = 0.37;
            let m: Vec<C64> = (0..50)
                .map(|_| C64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
                .collect();
            let out = dd_symbol_detect(&m, &vec![v; 50], c).unwrap();
            for (k, &mk) in m.iter().enumerate() {
                let w: Vec<f64> = c
                    .points()
                    .iter()
                    .map(|a| (-(mk - a).norm_sqr() / v).exp())
                    .collect();
                let s: f64 = w.iter().sum();
                for (a, wa) in w.iter().enumerate() {
                    assert!((out.posteriors[k][a] - wa / s).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn own_observation_removed_leaves_no_information() {
        // Dividing the DD posterior by its only likelihood factor returns the
        // uniform prior, whose mean is zero for every symmetric constellation.
        let m = [C64::new(0.8, -0.3), C64::new(-2.0, 0.1)];
        let v = [0.5, 0.2];
        for c in [
            Constellation::Bpsk,
            Constellation::Qpsk,
            Constellation::Qam16,
        ] {
            let out = dd_symbol_detect(&m, &v, c).unwrap();
            for (k, row) in out.posteriors.iter().enumerate() {
                let mut w: Vec<f64> = row
                    .iter()
                    .zip(c.points())
                    .map(|(p, a)| p.ln() - (2.0 * (a.conj() * m[k]).re - a.norm_sqr()) / v[k])
                    .collect();
                softmax_in_place(&mut w);
                let mean: C64 = w.iter().zip(c.points()).map(|(p, a)| a * *p).sum();
                assert!(mean.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_free_converges_quickly() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let paths = random_paths(&mut rng, 8, 4, 3, true);
            let frame = *paths.frame();
            let idx = Constellation::Qpsk.random_indices(32, &mut rng);
            let x: Vec<C64> = idx.iter().map(|&i| Constellation::Qpsk.point(i)).collect();
            let mut z = x.clone();
            doppler_ifft(&mut z, 8, 4);
            let op = paths.td_operator();
            let r = DomainVector::new(Domain::Td, frame, op.apply(&z)).unwrap();
            let res = cross_domain_detect(
                &r,
                &op,
                Constellation::Qpsk,
                0.0,
                CrossDomainOptions { iterations: 2 },
                Some(&x),
            );
            let res = match res {
                Ok(res) => res,
                // A rank-deficient draw cannot be inverted without noise.
                Err(Error::Numeric(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            assert_eq!(res.hard, idx);
            assert!(
                res.per_iteration_mse.last().unwrap() < &1e-12,
                "{:?}",
                res.per_iteration_mse
            );
        }
    }
}
