//! Linear comparators: DD-domain MMSE and maximum-ratio combining.

use crate::channel::{dd_apply_adjoint, TdOperator};
use crate::error::{Error, Result};
use crate::modem::Constellation;
use crate::transforms::{doppler_fft, doppler_ifft, Domain, DomainVector};

use super::crossdomain::lmmse_estimate;
use super::{gaussian_posteriors, DetectionResult, GaussianMessage};

fn check_dd(y: &DomainVector<f64>, h: &TdOperator<f64>) -> Result<(usize, usize)> {
    if y.domain() != Domain::Dd {
        return Err(Error::WrongDomain {
            expected: Domain::Dd.to_string(),
            found: y.domain().to_string(),
        });
    }
    let (m, n) = (y.frame().m, y.frame().n);
    if h.dim() != m * n {
        return Err(Error::dim(format!(
            "channel dimension {} vs frame {}",
            h.dim(),
            m * n
        )));
    }
    Ok((m, n))
}

/// Linear MMSE on `y_DD = H_DD x + w` with a unit-variance prior, followed by
/// nearest-symbol slicing of the bias-corrected estimate.
///
/// `H_DD` is unitarily similar to `H_TD`, so the estimate is computed in the TD
/// domain and mapped back.
pub fn mmse_baseline(
    y: &DomainVector<f64>,
    h: &TdOperator<f64>,
    constellation: Constellation,
    n0: f64,
) -> Result<DetectionResult> {
    let (m, n) = check_dd(y, h)?;
    let mn = m * n;
    let mut r = y.as_slice().to_vec();
    doppler_ifft(&mut r, m, n);
    let prior = GaussianMessage::isotropic(mn, constellation.energy());
    let post = lmmse_estimate(&r, h, &prior, n0)?;
    let mut est = post.mean;
    doppler_fft(&mut est, m, n);
    let v = post.variance.iter().sum::<f64>() / mn as f64;
    let gain = (1.0 - v / constellation.energy()).max(1e-12);
    est.iter_mut().for_each(|e| *e /= gain);
    let var = (v / (gain * gain)).max(1e-300);
    Ok(DetectionResult::from_posteriors(
        gaussian_posteriors(&est, var, constellation),
        1,
    ))
}

/// `H_DD^H y` normalised by the mean column energy, then sliced.
pub fn mrc_baseline(
    y: &DomainVector<f64>,
    h: &TdOperator<f64>,
    constellation: Constellation,
    n0: f64,
) -> Result<DetectionResult> {
    let (m, n) = check_dd(y, h)?;
    let mn = m * n;
    let energy: f64 = h
        .taps()
        .iter()
        .flat_map(|(_, c)| c.iter().map(|v| v.norm_sqr()))
        .sum::<f64>()
        / mn as f64;
    if energy <= 0.0 {
        return Err(Error::Numeric("channel has no energy".into()));
    }
    let mut est = dd_apply_adjoint(h, y.as_slice(), m, n);
    est.iter_mut().for_each(|e| *e /= energy);
    let var = (n0 / energy).max(1e-300);
    Ok(DetectionResult::from_posteriors(
        gaussian_posteriors(&est, var, constellation),
        1,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{dd_effective_channel, Path, PathSet};
    use crate::modem::{awgn, snr_db_to_n0};
    use crate::transforms::FrameParams;
    use crate::C64;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dd_vec(frame: FrameParams, v: Vec<C64>) -> DomainVector<f64> {
        DomainVector::new(Domain::Dd, frame, v).unwrap()
    }

    #[test]
    fn identity_channel_zero_noise() {
        let frame = FrameParams::grid(4, 4);
        let paths = PathSet::new(frame, vec![Path::new(C64::new(1.0, 0.0), 0, 0.0)]).unwrap();
        let op = paths.td_operator();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Constellation::Qam16;
        let idx = c.random_indices(16, &mut rng);
        let y = dd_vec(frame, idx.iter().map(|&i| c.point(i)).collect());
        assert_eq!(mmse_baseline(&y, &op, c, 1e-9).unwrap().hard, idx);
        assert_eq!(mrc_baseline(&y, &op, c, 0.0).unwrap().hard, idx);
    }

    #[test]
    fn mmse_matches_dense_dd_oracle() {
        let frame = FrameParams::grid(4, 2);
        let paths = PathSet::new(
            frame,
            vec![
                Path::new(C64::new(0.7, 0.2), 0, 0.4),
                Path::new(C64::new(-0.3, 0.5), 1, -1.0),
                Path::new(C64::new(0.1, 0.3), 3, 0.8),
            ],
        )
        .unwrap();
        let op = paths.td_operator();
        let n0 = 0.2;
        let y: Vec<C64> = (0..8)
            .map(|i| C64::new((i as f64).sin(), (i as f64 * 0.7).cos()))
            .collect();
        let hd = dd_effective_channel(&paths).matrix.to_nalgebra();
        let a = &hd * hd.adjoint() + DMatrix::identity(8, 8) * C64::new(n0, 0.0);
        let est = hd.adjoint() * a.try_inverse().unwrap() * DVector::from_vec(y.clone());
        let cp = DMatrix::<C64>::identity(8, 8)
            - hd.adjoint()
                * (&hd * hd.adjoint() + DMatrix::identity(8, 8) * C64::new(n0, 0.0))
                    .try_inverse()
                    .unwrap()
                * &hd;
        let v: f64 = (0..8).map(|i| cp[(i, i)].re).sum::<f64>() / 8.0;

        let mut r = y.clone();
        doppler_ifft(&mut r, 4, 2);
        let post = lmmse_estimate(&r, &op, &GaussianMessage::isotropic(8, 1.0), n0).unwrap();
        let mut m = post.mean.clone();
        doppler_fft(&mut m, 4, 2);
        for i in 0..8 {
            assert!((m[i] - est[i]).norm() < 1e-10);
        }
        let res = mmse_baseline(&dd_vec(frame, y), &op, Constellation::Qam16, n0).unwrap();
        let want: Vec<usize> = (0..8)
            .map(|i| Constellation::Qam16.slice(est[i] / (1.0 - v)))
            .collect();
        assert_eq!(res.hard, want);
    }

    #[test]
    fn single_path_mrc_is_matched_filter() {
        let frame = FrameParams::grid(16, 8);
        let g = C64::new(0.6, -0.5);
        let paths = PathSet::new(frame, vec![Path::new(g, 3, 2.0)]).unwrap();
        let op = paths.td_operator();
        let snr_db = 6.0;
        let n0 = snr_db_to_n0(snr_db);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Constellation::Bpsk;
        let (mut errs, mut bits) = (0usize, 0usize);
        for _ in 0..400 {
            let idx = c.random_indices(128, &mut rng);
            let x: Vec<C64> = idx.iter().map(|&i| c.point(i)).collect();
            let mut z = x.clone();
            doppler_ifft(&mut z, 16, 8);
            let mut y = awgn(&op.apply(&z), n0, &mut rng);
            doppler_fft(&mut y, 16, 8);
            let res = mrc_baseline(&dd_vec(frame, y), &op, c, n0).unwrap();
            errs += res.bit_errors(&idx);
            bits += 128;
        }
        let ber = errs as f64 / bits as f64;
        let q = |x: f64| 0.5 * statrs::function::erf::erfc(x / 2f64.sqrt());
        let want = q((2.0 * g.norm_sqr() / n0).sqrt());
        let sd = (want * (1.0 - want) / bits as f64).sqrt();
        assert!((ber - want).abs() < 4.0 * sd, "{ber} vs {want}");
    }
}
