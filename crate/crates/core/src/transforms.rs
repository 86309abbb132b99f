//! Exact discrete transforms between the delay-Doppler (DD), time (TD) and
//! time-frequency (TF) domains.
//!
//! Layout: every `M x N` grid and every length-`MN` vector is stored delay-major,
//! index `l + k*M` (column-major `vec` of an `M x N` matrix). A TD sample `n`
//! therefore sits at `n = l + slot*M`, so the DD <-> TD kernel
//! `F_N^H (x) I_M` is a batch of `M` independent `N`-point DFTs.
//!
//! All DFTs are unitary (`1/sqrt(len)` scaling).

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// OTFS grid geometry under critical sampling (`T * delta_f = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    /// Delay bins (sub-carriers).
    pub m: usize,
    /// Doppler bins (time slots).
    pub n: usize,
    /// Sub-carrier spacing in Hz.
    pub delta_f: f64,
    /// Slot duration in seconds.
    pub t: f64,
}

impl FrameParams {
    /// Critically sampled frame: `T = 1/delta_f`.
    pub fn new(m: usize, n: usize, delta_f: f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::param(format!(
                "M and N must be positive, got {m}x{n}"
            )));
        }
        if !(delta_f.is_finite() && delta_f > 0.0) {
            return Err(Error::param(format!(
                "delta_f must be positive, got {delta_f}"
            )));
        }
        Ok(Self {
            m,
            n,
            delta_f,
            t: 1.0 / delta_f,
        })
    }

    /// Frame with a nominal 15 kHz spacing, for experiments where only `M`, `N` matter.
    pub fn grid(m: usize, n: usize) -> Self {
        Self::new(m, n, 15e3).expect("positive grid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::param("M and N must be positive"));
        }
        if ((self.t * self.delta_f) - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!(
                "critical sampling violated: T*delta_f = {}",
                self.t * self.delta_f
            )));
        }
        Ok(())
    }

    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    pub fn bandwidth(&self) -> f64 {
        self.m as f64 * self.delta_f
    }

    pub fn frame_duration(&self) -> f64 {
        self.n as f64 * self.t
    }

    pub fn delay_resolution(&self) -> f64 {
        self.t / self.m as f64
    }

    pub fn doppler_resolution(&self) -> f64 {
        1.0 / (self.n as f64 * self.t)
    }
}

/// Signal domain tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// Delay-Doppler.
    Dd,
    /// Time (TD symbol vector).
    Td,
    /// Time-frequency.
    Tf,
    /// Time-domain over the spatially spread antenna array.
    Tds,
    /// Time-domain over the angular (de-spread) array.
    Tda,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Domain::Dd => "DD",
            Domain::Td => "TD",
            Domain::Tf => "TF",
            Domain::Tds => "TDS",
            Domain::Tda => "TDA",
        };
        f.write_str(s)
    }
}

/// `M x N` complex grid, delay-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Real = f64> {
    m: usize,
    n: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> Grid<T> {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            data: vec![Complex::new(T::zero(), T::zero()); m * n],
        }
    }

    pub fn from_vec(m: usize, n: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != m * n {
            return Err(Error::dim(format!(
                "grid {m}x{n} needs {} entries, got {}",
                m * n,
                data.len()
            )));
        }
        Ok(Self { m, n, data })
    }

    pub fn from_fn(m: usize, n: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(m * n);
        for k in 0..n {
            for l in 0..m {
                data.push(f(l, k));
            }
        }
        Self { m, n, data }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, l: usize, k: usize) -> Complex<T> {
        self.data[l + k * self.m]
    }

    #[inline]
    pub fn set(&mut self, l: usize, k: usize, v: Complex<T>) {
        self.data[l + k * self.m] = v;
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.data
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> T {
        energy(&self.data)
    }

    fn check(&self, frame: &FrameParams) -> Result<()> {
        if self.m != frame.m || self.n != frame.n {
            return Err(Error::dim(format!(
                "grid is {}x{}, frame is {}x{}",
                self.m, self.n, frame.m, frame.n
            )));
        }
        Ok(())
    }
}

/// Length-`MN` (or `N_BS * MN`) complex vector tagged with its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainVector<T: Real = f64> {
    domain: Domain,
    frame: FrameParams,
    antennas: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> DomainVector<T> {
    /// Single-antenna vector (DD, TD or TF).
    pub fn new(domain: Domain, frame: FrameParams, data: Vec<Complex<T>>) -> Result<Self> {
        Self::with_antennas(domain, frame, 1, data)
    }

    /// Array vector; TDS and TDA vectors hold `antennas * MN` samples, antenna-major.
    pub fn with_antennas(
        domain: Domain,
        frame: FrameParams,
        antennas: usize,
        data: Vec<Complex<T>>,
    ) -> Result<Self> {
        let multi = matches!(domain, Domain::Tds | Domain::Tda);
        if !multi && antennas != 1 {
            return Err(Error::param(format!("{domain} vectors are single-antenna")));
        }
        if antennas == 0 {
            return Err(Error::param("antenna count must be positive"));
        }
        let want = antennas * frame.mn();
        if data.len() != want {
            return Err(Error::dim(format!(
                "{domain} vector needs {want} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            domain,
            frame,
            antennas,
            data,
        })
    }

    pub fn from_grid(domain: Domain, frame: FrameParams, grid: Grid<T>) -> Result<Self> {
        grid.check(&frame)?;
        Self::new(domain, frame, grid.data)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn frame(&self) -> &FrameParams {
        &self.frame
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.data
    }

    pub fn to_grid(&self) -> Grid<T> {
        Grid {
            m: self.frame.m,
            n: self.frame.n,
            data: self.data[..self.frame.mn()].to_vec(),
        }
    }

    pub fn energy(&self) -> T {
        energy(&self.data)
    }

    fn expect(&self, d: Domain) -> Result<()> {
        if self.domain != d {
            return Err(Error::WrongDomain {
                expected: d.to_string(),
                found: self.domain.to_string(),
            });
        }
        Ok(())
    }
}

pub(crate) fn energy<T: Real>(x: &[Complex<T>]) -> T {
    x.iter().fold(T::zero(), |acc, v| acc + v.norm_sqr())
}

fn plan<T: Real>(len: usize, dir: FftDirection) -> Arc<dyn Fft<T>> {
    FftPlanner::<T>::new().plan_fft(len, dir)
}

/// Applies a unitary `len`-point DFT in `dir` to each of the `count` strided sequences
/// `data[offset + i*stride]`, where sequence `s` starts at `s*start_step`.
fn strided_dft<T: Real>(
    data: &mut [Complex<T>],
    len: usize,
    count: usize,
    stride: usize,
    start_step: usize,
    dir: FftDirection,
) {
    let fft = plan::<T>(len, dir);
    let scale = T::one() / T::of_usize(len).sqrt();
    let mut buf = vec![Complex::new(T::zero(), T::zero()); len * count];
    for s in 0..count {
        for i in 0..len {
            buf[s * len + i] = data[s * start_step + i * stride];
        }
    }
    fft.process(&mut buf);
    for s in 0..count {
        for i in 0..len {
            data[s * start_step + i * stride] = buf[s * len + i] * scale;
        }
    }
}

/// In place `(F_N^H (x) I_M)`: DD vector to TD vector.
pub fn doppler_ifft<T: Real>(data: &mut [Complex<T>], m: usize, n: usize) {
    debug_assert_eq!(data.len(), m * n);
    strided_dft(data, n, m, m, 1, FftDirection::Inverse);
}

/// In place `(F_N (x) I_M)`: TD vector to DD vector.
pub fn doppler_fft<T: Real>(data: &mut [Complex<T>], m: usize, n: usize) {
    debug_assert_eq!(data.len(), m * n);
    strided_dft(data, n, m, m, 1, FftDirection::Forward);
}

/// In place `(I_N (x) F_M)`: per-slot DFT over the `M` samples (TD to TF).
pub fn delay_fft<T: Real>(data: &mut [Complex<T>], m: usize, n: usize) {
    debug_assert_eq!(data.len(), m * n);
    strided_dft(data, m, n, 1, m, FftDirection::Forward);
}

/// In place `(I_N (x) F_M^H)` (TF to TD).
pub fn delay_ifft<T: Real>(data: &mut [Complex<T>], m: usize, n: usize) {
    debug_assert_eq!(data.len(), m * n);
    strided_dft(data, m, n, 1, m, FftDirection::Inverse);
}

/// Discrete Zak transform of one period of an `MN`-periodic sequence.
///
/// `DZ[l,k] = (1/sqrt N) sum_n x[l + nM] e^{-j2 pi nk/N}`.
pub fn dzt<T: Real>(x: &[Complex<T>], frame: &FrameParams) -> Result<Grid<T>> {
    if x.len() != frame.mn() {
        return Err(Error::dim(format!(
            "DZT input has {} samples, frame needs {}",
            x.len(),
            frame.mn()
        )));
    }
    let mut data = x.to_vec();
    doppler_fft(&mut data, frame.m, frame.n);
    Ok(Grid {
        m: frame.m,
        n: frame.n,
        data,
    })
}

/// Inverse DZT: `x[l + nM] = (1/sqrt N) sum_k Z[l,k] e^{j2 pi nk/N}`.
pub fn idzt<T: Real>(z: &Grid<T>, frame: &FrameParams) -> Result<Vec<Complex<T>>> {
    z.check(frame)?;
    let mut data = z.data.clone();
    doppler_ifft(&mut data, frame.m, frame.n);
    Ok(data)
}

/// Evaluates the DZT sum at an arbitrary (possibly out-of-range) `(l, k)`,
/// treating `x` as one period of an `MN`-periodic sequence.
pub fn dzt_at<T: Real>(x: &[Complex<T>], frame: &FrameParams, l: i64, k: i64) -> Complex<T> {
    let (m, n) = (frame.m as i64, frame.n as i64);
    let mn = m * n;
    let mut acc = Complex::new(T::zero(), T::zero());
    for s in 0..n {
        let idx = (l + s * m).rem_euclid(mn) as usize;
        let phase = -T::TAU() * T::of(((s * k).rem_euclid(n)) as f64 / n as f64);
        acc = acc + x[idx] * Complex::from_polar(T::one(), phase);
    }
    acc / T::of_usize(frame.n).sqrt()
}

/// Backward-shift form `(1/sqrt N) sum_n x[l - nM] e^{+j2 pi nk/N}` of the DZT.
pub fn dzt_backward<T: Real>(x: &[Complex<T>], frame: &FrameParams) -> Result<Grid<T>> {
    if x.len() != frame.mn() {
        return Err(Error::dim("DZT input length"));
    }
    let (m, n) = (frame.m as i64, frame.n as i64);
    let mn = m * n;
    let scale = T::one() / T::of_usize(frame.n).sqrt();
    Ok(Grid::from_fn(frame.m, frame.n, |l, k| {
        let mut acc = Complex::new(T::zero(), T::zero());
        for s in 0..n {
            let idx = (l as i64 - s * m).rem_euclid(mn) as usize;
            let phase = T::TAU() * T::of(((s * k as i64) % n) as f64 / n as f64);
            acc = acc + x[idx] * Complex::from_polar(T::one(), phase);
        }
        acc * scale
    }))
}

/// Recovers the unnormalised `MN`-point DFT of `x` from its DZT:
/// `X[q] = sqrt(N) sum_l DZ[l, q mod N] e^{-j2 pi q l/(MN)}`.
pub fn dft_from_dzt<T: Real>(z: &Grid<T>, frame: &FrameParams) -> Result<Vec<Complex<T>>> {
    z.check(frame)?;
    let (m, n) = (frame.m, frame.n);
    let mn = m * n;
    let sq = T::of_usize(n).sqrt();
    Ok((0..mn)
        .map(|q| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for l in 0..m {
                let phase = -T::TAU() * T::of(((q * l) % mn) as f64 / mn as f64);
                acc = acc + z.get(l, q % n) * Complex::from_polar(T::one(), phase);
            }
            acc * sq
        })
        .collect())
}

/// DZT-domain product: `(1/sqrt N) sum_k' X[l,k'] Y[l,k-k']`.
pub fn dzt_product<T: Real>(zx: &Grid<T>, zy: &Grid<T>) -> Result<Grid<T>> {
    if zx.m != zy.m || zx.n != zy.n {
        return Err(Error::dim("DZT grids differ in shape"));
    }
    let (m, n) = (zx.m, zx.n);
    let scale = T::one() / T::of_usize(n).sqrt();
    Ok(Grid::from_fn(m, n, |l, k| {
        let mut acc = Complex::new(T::zero(), T::zero());
        for kp in 0..n {
            acc = acc + zx.get(l, kp) * zy.get(l, (k + n - kp) % n);
        }
        acc * scale
    }))
}

/// ISFFT: `X_TF = F_M X_DD F_N^H`.
pub fn isfft<T: Real>(x_dd: &Grid<T>, frame: &FrameParams) -> Result<Grid<T>> {
    x_dd.check(frame)?;
    let mut data = x_dd.data.clone();
    doppler_ifft(&mut data, frame.m, frame.n);
    delay_fft(&mut data, frame.m, frame.n);
    Ok(Grid {
        m: frame.m,
        n: frame.n,
        data,
    })
}

/// SFFT: `Y_DD = F_M^H Y_TF F_N`.
pub fn sfft<T: Real>(y_tf: &Grid<T>, frame: &FrameParams) -> Result<Grid<T>> {
    y_tf.check(frame)?;
    let mut data = y_tf.data.clone();
    delay_ifft(&mut data, frame.m, frame.n);
    doppler_fft(&mut data, frame.m, frame.n);
    Ok(Grid {
        m: frame.m,
        n: frame.n,
        data,
    })
}

/// `x_TD = (F_N^H (x) I_M) x_DD`.
pub fn dd_to_td<T: Real>(x: &DomainVector<T>) -> Result<DomainVector<T>> {
    x.expect(Domain::Dd)?;
    let mut data = x.data.clone();
    doppler_ifft(&mut data, x.frame.m, x.frame.n);
    DomainVector::new(Domain::Td, x.frame, data)
}

/// `y_DD = (F_N (x) I_M) r`.
pub fn td_to_dd<T: Real>(r: &DomainVector<T>) -> Result<DomainVector<T>> {
    r.expect(Domain::Td)?;
    let mut data = r.data.clone();
    doppler_fft(&mut data, r.frame.m, r.frame.n);
    DomainVector::new(Domain::Dd, r.frame, data)
}

/// `x_TF = (I_N (x) F_M) x_TD`.
pub fn td_to_tf<T: Real>(x: &DomainVector<T>) -> Result<DomainVector<T>> {
    x.expect(Domain::Td)?;
    let mut data = x.data.clone();
    delay_fft(&mut data, x.frame.m, x.frame.n);
    DomainVector::new(Domain::Tf, x.frame, data)
}

/// `x_TD = (I_N (x) F_M^H) x_TF`.
pub fn tf_to_td<T: Real>(x: &DomainVector<T>) -> Result<DomainVector<T>> {
    x.expect(Domain::Tf)?;
    let mut data = x.data.clone();
    delay_ifft(&mut data, x.frame.m, x.frame.n);
    DomainVector::new(Domain::Td, x.frame, data)
}

/// Dense unitary DFT matrix `F_len` (row-major), for oracle checks.
pub fn dft_matrix(len: usize) -> Vec<Complex<f64>> {
    let s = 1.0 / (len as f64).sqrt();
    let mut out = Vec::with_capacity(len * len);
    for r in 0..len {
        for c in 0..len {
            let ph = -std::f64::consts::TAU * ((r * c) % len) as f64 / len as f64;
            out.push(Complex::from_polar(s, ph));
        }
    }
    out
}
