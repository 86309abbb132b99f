//! OTFS transmitter and receiver over the reduced-CP frame.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, PathSet};
use crate::transforms::{self, Domain, DomainVector, FrameParams, Grid};
use crate::{Error, Real, Result};

/// Unit-energy constellations with Gray labelling.
///
/// Symbol index `i` carries bits `b_0 b_1 ...` as the binary expansion of `i`, MSB first.
/// BPSK: `0 -> +1`, `1 -> -1`. QPSK: `((1-2b_0) + j(1-2b_1))/sqrt 2`.
/// 16-QAM: each axis maps `00, 01, 11, 10` to `-3, -1, +1, +3`, scaled by `1/sqrt 10`,
/// with `b_0 b_1` on the in-phase axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    Bpsk,
    Qpsk,
    Qam16,
}

impl Constellation {
    pub fn order(&self) -> usize {
        match self {
            Constellation::Bpsk => 2,
            Constellation::Qpsk => 4,
            Constellation::Qam16 => 16,
        }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order().trailing_zeros() as usize
    }

    pub fn points(&self) -> Vec<Complex<f64>> {
        (0..self.order()).map(|i| self.point(i)).collect()
    }

    pub fn point(&self, idx: usize) -> Complex<f64> {
        match self {
            Constellation::Bpsk => Complex::new(if idx == 0 { 1.0 } else { -1.0 }, 0.0),
            Constellation::Qpsk => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let re = if idx & 2 == 0 { s } else { -s };
                let im = if idx & 1 == 0 { s } else { -s };
                Complex::new(re, im)
            }
            Constellation::Qam16 => {
                const AXIS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0];
                let s = 1.0 / 10f64.sqrt();
                Complex::new(AXIS[(idx >> 2) & 3] * s, AXIS[idx & 3] * s)
            }
        }
    }

    pub fn bits(&self, idx: usize) -> Vec<u8> {
        let q = self.bits_per_symbol();
        (0..q).map(|b| ((idx >> (q - 1 - b)) & 1) as u8).collect()
    }

    /// Maps a bit slice (length a multiple of `bits_per_symbol`) to symbol indices.
    pub fn indices_from_bits(&self, bits: &[u8]) -> Result<Vec<usize>> {
        let q = self.bits_per_symbol();
        if bits.len() % q != 0 {
            return Err(Error::dim(format!(
                "{} bits do not fill {q}-bit symbols",
                bits.len()
            )));
        }
        Ok(bits
            .chunks(q)
            .map(|c| c.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize))
            .collect())
    }

    /// Nearest constellation index; ties resolve to the lowest index.
    pub fn slice(&self, y: Complex<f64>) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for i in 0..self.order() {
            let d = (y - self.point(i)).norm_sqr();
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }

    /// Mean symbol energy (1 by construction).
    pub fn energy(&self) -> f64 {
        self.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order() as f64
    }

    pub fn random_indices<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        (0..len)
            .map(|_| rng.random_range(0..self.order()))
            .collect()
    }
}

/// `n0 = E_s 10^{-snr_db/10}` with `E_s = 1`.
pub fn snr_db_to_n0(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Builds a DD grid from constellation indices (delay-major order).
pub fn symbols_to_grid<T: Real>(
    c: Constellation,
    idx: &[usize],
    frame: &FrameParams,
) -> Result<Grid<T>> {
    let data = idx
        .iter()
        .map(|&i| {
            let p = c.point(i);
            Complex::new(T::of(p.re), T::of(p.im))
        })
        .collect();
    Grid::from_vec(frame.m, frame.n, data)
}

/// `x_TD[m + nM] = (1/sqrt N) sum_k X_DD[m,k] e^{j2 pi nk/N}`.
pub fn modulate<T: Real>(x_dd: &Grid<T>, frame: &FrameParams) -> Result<DomainVector<T>> {
    let v = DomainVector::from_grid(Domain::Dd, *frame, x_dd.clone())?;
    transforms::dd_to_td(&v)
}

/// Matched-filter receiver for the rectangular pulse: `y_DD = (F_N (x) I_M) r`.
pub fn demodulate<T: Real>(r: &DomainVector<T>) -> Result<Grid<T>> {
    Ok(transforms::td_to_dd(r)?.to_grid())
}

/// DZT of the rectangular pulse, `1/sqrt(MN)` everywhere.
pub fn rect_pulse_dzt<T: Real>(frame: &FrameParams) -> Grid<T> {
    let v = T::one() / T::of_usize(frame.mn()).sqrt();
    Grid::from_fn(frame.m, frame.n, |_, _| Complex::new(v, T::zero()))
}

/// DD-domain pulse shaping `sqrt(MN) X_DD . DZ_g` (entrywise).
pub fn dd_pulse_shape<T: Real>(x_dd: &Grid<T>, dz_g: &Grid<T>) -> Result<Grid<T>> {
    if x_dd.rows() != dz_g.rows() || x_dd.cols() != dz_g.cols() {
        return Err(Error::dim("pulse grid shape"));
    }
    let s = T::of_usize(x_dd.rows() * x_dd.cols()).sqrt();
    Ok(Grid::from_fn(x_dd.rows(), x_dd.cols(), |l, k| {
        x_dd.get(l, k) * dz_g.get(l, k) * s
    }))
}

/// Payload with a single frame-level cyclic prefix of `l_max` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct OtfsFrame<T: Real = f64> {
    pub payload: DomainVector<T>,
    pub cp: Vec<Complex<T>>,
}

impl<T: Real> OtfsFrame<T> {
    pub fn l_max(&self) -> usize {
        self.cp.len()
    }

    /// Transmitted sample stream `[cp, payload]`.
    pub fn samples(&self) -> Vec<Complex<T>> {
        let mut s = self.cp.clone();
        s.extend_from_slice(self.payload.as_slice());
        s
    }
}

pub fn add_cp<T: Real>(x_td: &DomainVector<T>, l_max: usize) -> Result<OtfsFrame<T>> {
    if x_td.domain() != Domain::Td {
        return Err(Error::WrongDomain {
            expected: "TD".into(),
            found: x_td.domain().to_string(),
        });
    }
    let d = x_td.as_slice();
    if l_max > d.len() {
        return Err(Error::param("CP longer than the frame"));
    }
    Ok(OtfsFrame {
        payload: x_td.clone(),
        cp: d[d.len() - l_max..].to_vec(),
    })
}

pub fn remove_cp<T: Real>(
    received: &[Complex<T>],
    l_max: usize,
    frame: &FrameParams,
) -> Result<DomainVector<T>> {
    if received.len() != frame.mn() + l_max {
        return Err(Error::dim(format!(
            "received {} samples, expected MN + l_max = {}",
            received.len(),
            frame.mn() + l_max
        )));
    }
    DomainVector::new(Domain::Td, *frame, received[l_max..].to_vec())
}

/// Physical LTV propagation of a sample stream that starts `offset` samples
/// before the payload: `r[i] = sum_p h_p gamma^{nu_p (i - offset - l_p)} s[i - l_p]`.
pub fn propagate<T: Real>(paths: &PathSet<T>, s: &[Complex<T>], offset: usize) -> Vec<Complex<T>> {
    let mn = T::of_usize(paths.frame().mn());
    let off = offset as i64;
    (0..s.len())
        .map(|i| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for p in paths.paths() {
                if i >= p.delay {
                    let t = T::of((i as i64 - off - p.delay as i64) as f64);
                    let ph = T::TAU() * p.doppler * t / mn;
                    acc = acc + p.gain * Complex::from_polar(T::one(), ph) * s[i - p.delay];
                }
            }
            acc
        })
        .collect()
}

/// Adds circularly symmetric Gaussian noise of variance `n0` per complex sample.
pub fn awgn<T: Real, R: Rng + ?Sized>(x: &[Complex<T>], n0: f64, rng: &mut R) -> Vec<Complex<T>> {
    if n0 <= 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|v| {
            let w = complex_gaussian(rng, n0);
            *v + Complex::new(T::of(w.re), T::of(w.im))
        })
        .collect()
}

/// Received signal in both domains: `r = H_TD x_TD + w`, `y_DD = (F_N (x) I_M) r`.
pub fn transmit<T: Real, R: Rng + ?Sized>(
    x_dd: &Grid<T>,
    paths: &PathSet<T>,
    n0: f64,
    rng: &mut R,
) -> Result<(DomainVector<T>, DomainVector<T>)> {
    let frame = *paths.frame();
    let x = modulate(x_dd, &frame)?;
    let clean = paths.td_operator().apply(x.as_slice());
    let r = DomainVector::new(Domain::Td, frame, awgn(&clean, n0, rng))?;
    let y = transforms::td_to_dd(&r)?;
    Ok((y, r))
}
