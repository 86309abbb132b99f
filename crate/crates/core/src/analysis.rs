//! Pairwise-error-probability analysis of uncoded and coded OTFS.
//!
//! For an error sequence `e` (difference of two DD codewords) and a path set with
//! delays `l_i` and Dopplers `nu_i`, path `i` maps `e` to
//! `Xi_i e = (F_N (x) I_M) Pi^{l_i} Delta^{nu_i} (F_N^H (x) I_M) e`, and the
//! codeword difference matrix is the Gram matrix `Omega[i, j] = (Xi_i e)^H (Xi_j e)`.
//! Its spectrum gives the diversity order (rank) and coding gain of the PEP bound
//! `exp(-(E_s / 4 N_0) h^H Omega h)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isac::Precoder;
use crate::linalg::CMatrix;
use crate::transforms::{doppler_fft, doppler_ifft, FrameParams};
use crate::C64;

/// `Pi^delay Delta^doppler z` on a TD vector: `out[n] = e^{j2pi (n-l) nu / MN} z[n-l]`.
pub fn td_shift(z: &[C64], delay: i64, doppler: f64) -> Vec<C64> {
    let mn = z.len();
    let l = delay.rem_euclid(mn.max(1) as i64) as usize;
    (0..mn)
        .map(|n| {
            let src = (n + mn - l) % mn;
            let ph = std::f64::consts::TAU * doppler * src as f64 / mn as f64;
            z[src] * C64::from_polar(1.0, ph)
        })
        .collect()
}

/// `Xi e` for one path, optionally precoded: `(F_N (x) I_M) Pi^l Delta^nu W (F_N^H (x) I_M) e`.
pub fn xi_apply(
    e: &[C64],
    delay: usize,
    doppler: f64,
    precoder: Option<&Precoder>,
    frame: &FrameParams,
) -> Vec<C64> {
    let (m, n) = (frame.m, frame.n);
    let mut z = e.to_vec();
    doppler_ifft(&mut z, m, n);
    if let Some(w) = precoder {
        z = w.apply(&z);
    }
    let mut out = td_shift(&z, delay as i64, doppler);
    doppler_fft(&mut out, m, n);
    out
}

/// Codeword difference matrix with its spectrum.
#[derive(Debug, Clone)]
pub struct CodewordDifferenceMatrix {
    pub omega: CMatrix<f64>,
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues above `d_e2 * 1e-9 * P`.
    pub rank: usize,
    /// `e^H e`.
    pub d_e2: f64,
    pub p: usize,
}

impl CodewordDifferenceMatrix {
    /// Builds the spectrum of an arbitrary Hermitian PSD `P x P` matrix.
    pub fn from_omega(omega: CMatrix<f64>, d_e2: f64) -> Result<Self> {
        let p = omega.rows();
        if omega.cols() != p {
            return Err(Error::dim(format!("omega is {p}x{}", omega.cols())));
        }
        let eig = SymmetricEigen::new(omega.to_nalgebra());
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        let tol = d_e2 * 1e-9 * p as f64;
        let rank = eigenvalues.iter().filter(|&&v| v > tol).count();
        Ok(Self {
            omega,
            eigenvalues,
            rank,
            d_e2,
            p,
        })
    }

    /// `diag(sqrt a) Omega diag(sqrt a)`, the matrix seen under per-path power allocation `a`.
    pub fn weighted(&self, alpha: &[f64]) -> Result<Self> {
        if alpha.len() != self.p {
            return Err(Error::dim(format!(
                "{} weights for {} paths",
                alpha.len(),
                self.p
            )));
        }
        let s: Vec<f64> = alpha.iter().map(|a| a.max(0.0).sqrt()).collect();
        let omega = CMatrix::from_fn(self.p, self.p, |i, j| self.omega.get(i, j) * (s[i] * s[j]));
        Self::from_omega(omega, self.d_e2)
    }

    /// Product of the `rank` non-zero eigenvalues.
    pub fn nonzero_product(&self) -> f64 {
        self.eigenvalues[..self.rank].iter().product()
    }

    /// `det Omega`, the product of all eigenvalues.
    pub fn determinant(&self) -> f64 {
        self.eigenvalues.iter().product()
    }

    /// `h^H Omega h`.
    pub fn quadratic_form(&self, h: &[C64]) -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.p {
            for j in 0..self.p {
                acc += h[i].conj() * self.omega.get(i, j) * h[j];
            }
        }
        acc.re
    }
}

/// `Omega(e)` for the path delays/Dopplers, with optional per-path precoders.
pub fn codeword_difference_matrix(
    e: &[C64],
    delays: &[usize],
    dopplers: &[f64],
    frame: &FrameParams,
    precoders: Option<&[Precoder]>,
) -> Result<CodewordDifferenceMatrix> {
    let p = delays.len();
    if dopplers.len() != p {
        return Err(Error::dim(format!(
            "{p} delays but {} Dopplers",
            dopplers.len()
        )));
    }
    if e.len() != frame.mn() {
        return Err(Error::dim(format!(
            "error sequence {} vs MN = {}",
            e.len(),
            frame.mn()
        )));
    }
    if let Some(w) = precoders {
        if w.len() != p {
            return Err(Error::dim(format!("{} precoders for {p} paths", w.len())));
        }
    }
    let proj: Vec<Vec<C64>> = (0..p)
        .map(|i| xi_apply(e, delays[i], dopplers[i], precoders.map(|w| &w[i]), frame))
        .collect();
    let mut omega = CMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v: C64 = proj[i]
                .iter()
                .zip(&proj[j])
                .map(|(a, b)| a.conj() * b)
                .sum();
            omega.set(i, j, v);
            omega.set(j, i, v.conj());
        }
    }
    let d_e2 = e.iter().map(|v| v.norm_sqr()).sum();
    CodewordDifferenceMatrix::from_omega(omega, d_e2)
}

/// `exp(-(E_s / 4 N_0) h^H Omega h)`.
pub fn conditional_pep_bound(h: &[C64], cdm: &CodewordDifferenceMatrix, es_over_n0: f64) -> f64 {
    (-(es_over_n0 / 4.0) * cdm.quadratic_form(h).max(0.0)).exp()
}

/// Unconditional PEP bound under `h_i ~ CN(mean, 1/P)` per eigen-branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PepBound {
    /// `prod_i 1/(1 + g lambda_i) exp(-K_i g lambda_i / (1 + g lambda_i))`, `g = E_s / 4 N_0 P`.
    pub product: f64,
    /// `(prod_{i<=r} lambda_i)^{-1} g^{-r}`; only for Rayleigh fading.
    pub rayleigh_high_snr: Option<f64>,
}

pub fn unconditional_pep_bound(
    cdm: &CodewordDifferenceMatrix,
    es_over_n0: f64,
    rician_k: &[f64],
) -> Result<PepBound> {
    if !(es_over_n0 > 0.0) {
        return Err(Error::param(format!(
            "E_s/N_0 = {es_over_n0} must be positive"
        )));
    }
    if !rician_k.is_empty() && rician_k.len() != cdm.p {
        return Err(Error::dim(format!(
            "{} Rician factors for {} branches",
            rician_k.len(),
            cdm.p
        )));
    }
    let g = es_over_n0 / (4.0 * cdm.p as f64);
    let k = |i: usize| rician_k.get(i).copied().unwrap_or(0.0);
    let product = cdm
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let d = 1.0 + g * l;
            (-k(i) * g * l / d).exp() / d
        })
        .product();
    let rayleigh = rician_k.iter().all(|&v| v == 0.0);
    let rayleigh_high_snr =
        rayleigh.then(|| 1.0 / (cdm.nonzero_product() * g.powi(cdm.rank as i32)));
    Ok(PepBound {
        product,
        rayleigh_high_snr,
    })
}

/// Eigenvalue bounds and the quantities they bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenBounds {
    pub sum_inv_lambda: f64,
    /// `r^2 / (P d^2)`.
    pub sum_inv_lambda_lb: f64,
    pub sum_lambda_sq: f64,
    /// `P^2 d^4 / r`.
    pub sum_lambda_sq_lb: f64,
    /// Product of the `r` non-zero eigenvalues.
    pub product: f64,
    /// `d^{2r} exp(r - d^2 sum 1/lambda)`.
    pub product_lb_exact: f64,
    /// `d^{2r}`.
    pub product_lb_approx: f64,
    pub det: f64,
    /// `d^{2P}`.
    pub det_ub: f64,
}

pub fn eigen_product_bounds(cdm: &CodewordDifferenceMatrix) -> Result<EigenBounds> {
    let r = cdm.rank;
    if r == 0 {
        return Err(Error::param("codeword difference matrix has rank 0"));
    }
    let (d, p, rf) = (cdm.d_e2, cdm.p as f64, r as f64);
    let nz = &cdm.eigenvalues[..r];
    let sum_inv_lambda = nz.iter().map(|l| 1.0 / l).sum();
    Ok(EigenBounds {
        sum_inv_lambda,
        sum_inv_lambda_lb: rf * rf / (p * d),
        sum_lambda_sq: cdm.eigenvalues.iter().map(|l| l * l).sum(),
        sum_lambda_sq_lb: p * p * d * d / rf,
        product: nz.iter().product(),
        product_lb_exact: d.powi(r as i32) * (rf - d * sum_inv_lambda).exp(),
        product_lb_approx: d.powi(r as i32),
        det: cdm.determinant(),
        det_ub: d.powi(cdm.p as i32),
    })
}

/// Large-`P` PEP approximation `exp(-(E_s / 16 N_0) d^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargePBound {
    pub value: f64,
    /// False when `E_s / 4 N_0 < r / (2 d^2)`, outside the validity region.
    pub valid: bool,
}

pub fn large_p_pep_bound(d_e2: f64, es_over_n0: f64, rank: usize) -> LargePBound {
    let value = (-(es_over_n0 / 16.0) * d_e2).exp();
    let valid = d_e2 > 0.0 && es_over_n0 / 4.0 >= rank as f64 / (2.0 * d_e2);
    LargePBound { value, valid }
}

/// `10 log10(d_c^2 / d_u^2)`.
pub fn coding_gain_db(d_c2_min: f64, d_u2_min: f64) -> f64 {
    10.0 * (d_c2_min / d_u2_min).log10()
}

/// Reference distance `d_u^2` that turns `d_c2` into the quoted `gain_db`.
pub fn implied_reference_distance(d_c2: f64, gain_db: f64) -> f64 {
    d_c2 / 10f64.powf(gain_db / 10.0)
}

/// Random delay/Doppler draws for coding-gain averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PathEnsemble {
    /// `P` delays uniform on `0..=l_max`, Dopplers uniform on `[-k_max, k_max]`
    /// (integers unless `fractional`).
    Random {
        p: usize,
        l_max: usize,
        k_max: f64,
        fractional: bool,
    },
    /// Always the same delays and Dopplers.
    Fixed {
        delays: Vec<usize>,
        dopplers: Vec<f64>,
    },
}

impl PathEnsemble {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<usize>, Vec<f64>) {
        match self {
            PathEnsemble::Random {
                p,
                l_max,
                k_max,
                fractional,
            } => {
                let delays = (0..*p).map(|_| rng.random_range(0..=*l_max)).collect();
                let dopplers = (0..*p)
                    .map(|_| {
                        if *fractional {
                            rng.random_range(-*k_max..=*k_max)
                        } else {
                            let k = k_max.floor() as i64;
                            rng.random_range(-k..=k) as f64
                        }
                    })
                    .collect();
                (delays, dopplers)
            }
            PathEnsemble::Fixed { delays, dopplers } => (delays.clone(), dopplers.clone()),
        }
    }
}

/// Conditional coding gain `(prod_{i<=r} lambda_i)^{1/r} / P`, linear.
pub fn conditional_coding_gain(cdm: &CodewordDifferenceMatrix) -> f64 {
    if cdm.rank == 0 {
        return 0.0;
    }
    cdm.nonzero_product().powf(1.0 / cdm.rank as f64) / cdm.p as f64
}

/// Monte Carlo mean of the conditional coding gain over the ensemble, in dB.
pub fn average_coding_gain<R: Rng + ?Sized>(
    e: &[C64],
    frame: &FrameParams,
    ensemble: &PathEnsemble,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::param("trials must be at least 1"));
    }
    let mut acc = 0.0;
    for _ in 0..trials {
        let (d, k) = ensemble.draw(rng);
        acc += conditional_coding_gain(&codeword_difference_matrix(e, &d, &k, frame, None)?);
    }
    Ok(10.0 * (acc / trials as f64).log10())
}

/// One CSV-friendly row of bound values for a single instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub d_e2: f64,
    pub p: usize,
    pub rank: usize,
    pub product: f64,
    pub product_lb_exact: f64,
    pub det: f64,
    pub det_ub: f64,
    pub coding_gain_db: f64,
}

pub fn bound_row(cdm: &CodewordDifferenceMatrix) -> Result<BoundRow> {
    let b = eigen_product_bounds(cdm)?;
    Ok(BoundRow {
        d_e2: cdm.d_e2,
        p: cdm.p,
        rank: cdm.rank,
        product: b.product,
        product_lb_exact: b.product_lb_exact,
        det: b.det,
        det_ub: b.det_ub,
        coding_gain_db: 10.0 * conditional_coding_gain(cdm).log10(),
    })
}

/// Dense `Xi_i` for oracle checks.
pub fn xi_dense(delay: usize, doppler: f64, frame: &FrameParams) -> DMatrix<C64> {
    let mn = frame.mn();
    DMatrix::from_fn(mn, mn, |r, c| {
        let mut unit = vec![C64::new(0.0, 0.0); mn];
        unit[c] = C64::new(1.0, 0.0);
        xi_apply(&unit, delay, doppler, None, frame)[r]
    })
}

/// Random BPSK-difference error sequence: entries in `{0, +-2}` with at least one
/// non-zero.
pub fn random_bpsk_error<R: Rng + ?Sized>(mn: usize, weight: usize, rng: &mut R) -> Vec<C64> {
    let weight = weight.clamp(1, mn);
    let mut idx: Vec<usize> = (0..mn).collect();
    for i in 0..weight {
        let j = rng.random_range(i..mn);
        idx.swap(i, j);
    }
    let mut e = vec![C64::new(0.0, 0.0); mn];
    for &i in &idx[..weight] {
        e[i] = C64::new(if rng.random::<bool>() { 2.0 } else { -2.0 }, 0.0);
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian;
    use crate::linalg::CMatrix;
    use crate::transforms::dft_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_xi_oracle(delay: usize, doppler: f64, frame: &FrameParams) -> CMatrix<f64> {
        let (m, n) = (frame.m, frame.n);
        let mn = m * n;
        let f = CMatrix::from_row_major(n, n, dft_matrix(n)).unwrap();
        let fi = f.kron(&CMatrix::identity(m));
        let shift = CMatrix::from_fn(mn, mn, |r, c| {
            if c == (r + mn - delay) % mn {
                C64::from_polar(1.0, std::f64::consts::TAU * doppler * c as f64 / mn as f64)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        fi.mul(&shift).unwrap().mul(&fi.adjoint()).unwrap()
    }

    #[test]
    fn scalar_and_zero_cases() {
        let frame = FrameParams::grid(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_bpsk_error(10, 3, &mut rng);
        let c = codeword_difference_matrix(&e, &[1], &[2.0], &frame, None).unwrap();
        assert!((c.omega.get(0, 0).re - 12.0).abs() < 1e-12);
        assert_eq!(c.rank, 1);
        let z = vec![C64::new(0.0, 0.0); 10];
        let c = codeword_difference_matrix(&z, &[0, 1], &[0.0, 1.0], &frame, None).unwrap();
        assert_eq!(c.rank, 0);
        assert!(c.omega.frobenius_sq() == 0.0);
        assert!(codeword_difference_matrix(&e, &[0, 1], &[0.0], &frame, None).is_err());
    }

    #[test]
    fn matches_dense_oracle() {
        let frame = FrameParams::grid(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let e = random_bpsk_error(10, rng.random_range(1..=10), &mut rng);
            let delays = [rng.random_range(0..2), rng.random_range(0..2)];
            let dopplers = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let c = codeword_difference_matrix(&e, &delays, &dopplers, &frame, None).unwrap();
            let proj: Vec<Vec<C64>> = (0..2)
                .map(|i| {
                    dense_xi_oracle(delays[i], dopplers[i], &frame)
                        .mul_vec(&e)
                        .unwrap()
                })
                .collect();
            for i in 0..2 {
                for j in 0..2 {
                    let want: C64 = proj[i]
                        .iter()
                        .zip(&proj[j])
                        .map(|(a, b)| a.conj() * b)
                        .sum();
                    assert!((c.omega.get(i, j) - want).norm() < 1e-10);
                }
                assert!((c.omega.get(i, i).re - c.d_e2).abs() < 1e-9);
            }
            let dense = xi_dense(delays[0], dopplers[0], &frame);
            let oracle = dense_xi_oracle(delays[0], dopplers[0], &frame);
            assert!(CMatrix::from_nalgebra(&dense).max_abs_diff(&oracle) < 1e-12);
        }
    }

    #[test]
    fn conditional_pep_examples() {
        let omega = CMatrix::from_fn(1, 1, |_, _| C64::new(4.0, 0.0));
        let c = CodewordDifferenceMatrix::from_omega(omega, 4.0).unwrap();
        assert!(
            (conditional_pep_bound(&[C64::new(1.0, 0.0)], &c, 4.0) - (-4f64).exp()).abs() < 1e-15
        );
        assert_eq!(conditional_pep_bound(&[C64::new(0.0, 0.0)], &c, 4.0), 1.0);
    }

    #[test]
    fn conditional_pep_eigen_form() {
        let frame = FrameParams::grid(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_bpsk_error(10, 4, &mut rng);
        let c =
            codeword_difference_matrix(&e, &[0, 1, 1], &[0.3, -1.2, 2.0], &frame, None).unwrap();
        let eig = SymmetricEigen::new(c.omega.to_nalgebra());
        for _ in 0..10 {
            let h: Vec<C64> = (0..3).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let s: f64 = (0..3)
                .map(|i| {
                    let v = eig.eigenvectors.column(i);
                    let ht: C64 = (0..3).map(|j| v[j].conj() * h[j]).sum();
                    eig.eigenvalues[i] * ht.norm_sqr()
                })
                .sum();
            let want = (-(2.0 / 4.0) * s).exp();
            assert!((conditional_pep_bound(&h, &c, 2.0) - want).abs() < 1e-10);
        }
    }

    #[test]
    fn unconditional_examples() {
        let one = CodewordDifferenceMatrix::from_omega(CMatrix::identity(1), 1.0).unwrap();
        // g = E_s / 4 N_0 P = 9.
        let b = unconditional_pep_bound(&one, 36.0, &[]).unwrap();
        assert!((b.product - 0.1).abs() < 1e-15);
        let four = CMatrix::from_fn(2, 2, |i, j| C64::new(if i == j { 4.0 } else { 0.0 }, 0.0));
        let c = CodewordDifferenceMatrix::from_omega(four, 4.0).unwrap();
        let b = unconditional_pep_bound(&c, 40.0, &[0.0, 0.0]).unwrap();
        assert!((b.rayleigh_high_snr.unwrap() - 2.5e-3).abs() < 1e-15);
        assert!(b.product <= b.rayleigh_high_snr.unwrap());
        let ric = unconditional_pep_bound(&c, 40.0, &[1.0, 1.0]).unwrap();
        assert!(ric.rayleigh_high_snr.is_none());
        assert!(ric.product < b.product);
        assert!(unconditional_pep_bound(&c, 0.0, &[]).is_err());
    }

    #[test]
    fn unconditional_matches_monte_carlo() {
        let frame = FrameParams::grid(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_bpsk_error(10, 2, &mut rng);
        let c = codeword_difference_matrix(&e, &[0, 1], &[1.0, -0.4], &frame, None).unwrap();
        let es_n0 = 2.0;
        let trials = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..trials {
            let h: Vec<C64> = (0..2).map(|_| complex_gaussian(&mut rng, 0.5)).collect();
            let v = conditional_pep_bound(&h, &c, es_n0);
            s += v;
            s2 += v * v;
        }
        let mean = s / trials as f64;
        let sd = ((s2 / trials as f64 - mean * mean) / trials as f64).sqrt();
        let bound = unconditional_pep_bound(&c, es_n0, &[]).unwrap().product;
        assert!(mean <= bound + 4.0 * sd, "{mean} vs {bound}");
        assert!((mean - bound).abs() < 4.0 * sd);
    }

    #[test]
    fn bounds_tight_on_scaled_identity() {
        let d = 8.0;
        let omega = CMatrix::from_fn(3, 3, |i, j| C64::new(if i == j { d } else { 0.0 }, 0.0));
        let c = CodewordDifferenceMatrix::from_omega(omega, d).unwrap();
        let b = eigen_product_bounds(&c).unwrap();
        assert!((b.sum_inv_lambda - b.sum_inv_lambda_lb).abs() < 1e-12);
        assert!((b.sum_lambda_sq - b.sum_lambda_sq_lb).abs() < 1e-9);
        for v in [b.product_lb_exact, b.product_lb_approx, b.det_ub] {
            assert!((v - b.product).abs() < 1e-8 * b.product);
        }
    }

    #[test]
    fn duplicate_path_is_rank_one() {
        let frame = FrameParams::grid(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_bpsk_error(10, 3, &mut rng);
        let c = codeword_difference_matrix(&e, &[1, 1], &[2.0, 2.0], &frame, None).unwrap();
        assert_eq!(c.rank, 1);
        let b = eigen_product_bounds(&c).unwrap();
        assert!((b.product - 2.0 * c.d_e2).abs() < 1e-9);
        assert!(b.product_lb_exact <= b.product * (1.0 + 1e-12));
        assert!(b.sum_inv_lambda >= b.sum_inv_lambda_lb);
        assert!(b.det <= b.det_ub);
    }

    #[test]
    fn large_p_and_gain_formulas() {
        assert_eq!(large_p_pep_bound(0.0, 10.0, 1).value, 1.0);
        assert!(!large_p_pep_bound(0.0, 10.0, 1).valid);
        assert!(large_p_pep_bound(40.0, 10.0, 4).valid);
        assert!(!large_p_pep_bound(4.0, 0.1, 4).valid);
        assert!((coding_gain_db(40.0, 4.0) - 10.0).abs() < 1e-12);
        assert!((coding_gain_db(12.0, 4.0) - 4.771_212_547).abs() < 1e-8);
        let quoted = [(12.0, 1.83), (20.0, 4.12), (32.0, 6.37), (40.0, 7.42)];
        let implied: Vec<f64> = quoted
            .iter()
            .map(|&(d, g)| implied_reference_distance(d, g))
            .collect();
        assert!(implied.iter().all(|&d| (7.0..8.0).contains(&d)));
        let ours: Vec<f64> = quoted
            .iter()
            .map(|&(d, _)| coding_gain_db(d, 4.0))
            .collect();
        assert!(ours.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn orthogonal_ensemble_gain_is_exact() {
        let frame = FrameParams::grid(2, 5);
        let mut e = vec![C64::new(0.0, 0.0); 10];
        e[3] = C64::new(2.0, 0.0);
        let ens = PathEnsemble::Fixed {
            delays: vec![0, 1],
            dopplers: vec![0.0, 2.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = average_coding_gain(&e, &frame, &ens, 5, &mut rng).unwrap();
        assert!((g - 10.0 * (4.0f64 / 2.0).log10()).abs() < 1e-10);
    }

    #[test]
    fn weighted_matrix_scales_entries() {
        let frame = FrameParams::grid(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e = random_bpsk_error(10, 4, &mut rng);
        let c = codeword_difference_matrix(&e, &[0, 1], &[0.5, -1.0], &frame, None).unwrap();
        let w = c.weighted(&[4.0, 1.0]).unwrap();
        assert!((w.omega.get(0, 0).re - 4.0 * c.d_e2).abs() < 1e-9);
        assert!((w.omega.get(0, 1) - c.omega.get(0, 1) * 2.0).norm() < 1e-12);
        assert!((w.determinant() - 4.0 * c.determinant()).abs() < 1e-8 * (1.0 + c.determinant()));
    }
}
