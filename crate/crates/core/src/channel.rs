//! Linear time-varying channel model.
//!
//! A [`PathSet`] holds `P` paths with complex gain, integer delay tap and real
//! Doppler index. Under the reduced-CP frame the TD action is
//! `r[n] = sum_p h_p gamma^{nu_p [n - l_p]_MN} x[[n - l_p]_MN]`, `gamma = e^{j2 pi/MN}`,
//! i.e. `H_TD = sum_p h_p Pi^{l_p} Delta^{nu_p}`.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::CMatrix;
use crate::transforms::{self, Domain, FrameParams, Grid};
use crate::{Error, Real, Result};

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path<T: Real = f64> {
    pub gain: Complex<T>,
    /// Integer delay tap `l_p`.
    pub delay: usize,
    /// Doppler index `k_p + kappa_p` in units of `1/(NT)`.
    pub doppler: T,
    /// Fractional delay `iota_p`; must be zero.
    pub frac_delay: T,
}

impl<T: Real> Path<T> {
    pub fn new(gain: Complex<T>, delay: usize, doppler: T) -> Self {
        Self {
            gain,
            delay,
            doppler,
            frac_delay: T::zero(),
        }
    }

    /// Integer part `k_p` (nearest integer) and fractional part `kappa_p`.
    pub fn doppler_parts(&self) -> (i64, T) {
        let k = self.doppler.round();
        (k.to_i64().unwrap_or(0), self.doppler - k)
    }
}

/// The `P`-path delay-Doppler channel of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet<T: Real = f64> {
    frame: FrameParams,
    paths: Vec<Path<T>>,
}

impl<T: Real> PathSet<T> {
    pub fn new(frame: FrameParams, paths: Vec<Path<T>>) -> Result<Self> {
        frame.validate()?;
        if paths.is_empty() {
            return Err(Error::param("a path set needs at least one path"));
        }
        let half_n = T::of_usize(frame.n) / T::of(2.0);
        for (i, p) in paths.iter().enumerate() {
            if p.delay >= frame.m {
                return Err(Error::param(format!(
                    "path {i}: delay tap {} exceeds M-1 = {}",
                    p.delay,
                    frame.m - 1
                )));
            }
            if !p.doppler.is_finite() || p.doppler.abs() > half_n {
                return Err(Error::param(format!(
                    "path {i}: Doppler index {} outside [-N/2, N/2]",
                    p.doppler
                )));
            }
            if p.frac_delay != T::zero() {
                return Err(Error::Unsupported(format!(
                    "path {i}: fractional delay is not modelled"
                )));
            }
        }
        Ok(Self { frame, paths })
    }

    /// Convenience constructor from parallel gain/delay/Doppler lists.
    pub fn from_lists(
        frame: FrameParams,
        gains: &[Complex<T>],
        delays: &[usize],
        dopplers: &[T],
    ) -> Result<Self> {
        if gains.len() != delays.len() || gains.len() != dopplers.len() {
            return Err(Error::dim("gain, delay and Doppler lists differ in length"));
        }
        let paths = gains
            .iter()
            .zip(delays)
            .zip(dopplers)
            .map(|((&g, &l), &k)| Path::new(g, l, k))
            .collect();
        Self::new(frame, paths)
    }

    pub fn frame(&self) -> &FrameParams {
        &self.frame
    }

    pub fn paths(&self) -> &[Path<T>] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn max_delay(&self) -> usize {
        self.paths.iter().map(|p| p.delay).max().unwrap_or(0)
    }

    /// `||h||^2`.
    pub fn energy(&self) -> T {
        self.paths
            .iter()
            .fold(T::zero(), |a, p| a + p.gain.norm_sqr())
    }

    pub fn is_integer_doppler(&self) -> bool {
        self.paths.iter().all(|p| p.doppler == p.doppler.round())
    }

    pub fn has_distinct_delays(&self) -> bool {
        let mut d: Vec<usize> = self.paths.iter().map(|p| p.delay).collect();
        d.sort_unstable();
        d.windows(2).all(|w| w[0] != w[1])
    }

    /// Paths ordered by descending `|h_p|^2` (stable).
    pub fn sorted_by_power(&self) -> Vec<Path<T>> {
        let mut v = self.paths.clone();
        v.sort_by(|a, b| {
            b.gain
                .norm_sqr()
                .partial_cmp(&a.gain.norm_sqr())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        v
    }

    pub fn td_operator(&self) -> TdOperator<T> {
        TdOperator::new(self)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct PathRecord {
    re: f64,
    im: f64,
    delay: usize,
    doppler: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[allow(non_snake_case)]
struct PathSetRecord {
    M: usize,
    N: usize,
    delta_f: f64,
    paths: Vec<PathRecord>,
}

impl PathSet<f64> {
    /// JSON record `{M, N, delta_f, paths: [{re, im, delay, doppler}]}`.
    pub fn to_json(&self) -> String {
        let rec = PathSetRecord {
            M: self.frame.m,
            N: self.frame.n,
            delta_f: self.frame.delta_f,
            paths: self
                .paths
                .iter()
                .map(|p| PathRecord {
                    re: p.gain.re,
                    im: p.gain.im,
                    delay: p.delay,
                    doppler: p.doppler,
                })
                .collect(),
        };
        serde_json::to_string(&rec).expect("path set serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: PathSetRecord =
            serde_json::from_str(s).map_err(|e| Error::config("pathset", e.to_string()))?;
        let frame = FrameParams::new(rec.M, rec.N, rec.delta_f)?;
        let paths = rec
            .paths
            .into_iter()
            .map(|p| Path::new(Complex::new(p.re, p.im), p.delay, p.doppler))
            .collect();
        Self::new(frame, paths)
    }
}

/// Sparse TD channel operator with taps merged by delay.
///
/// Row `n` of `H_TD` has value `coef[n]` at column `[n - delay]_MN` for every tap.
#[derive(Debug, Clone)]
pub struct TdOperator<T: Real = f64> {
    mn: usize,
    taps: Vec<(usize, Vec<Complex<T>>)>,
}

impl<T: Real> TdOperator<T> {
    pub fn new(paths: &PathSet<T>) -> Self {
        let mn = paths.frame.mn();
        let mut taps: Vec<(usize, Vec<Complex<T>>)> = Vec::new();
        for p in &paths.paths {
            let idx = match taps.iter().position(|(d, _)| *d == p.delay) {
                Some(i) => i,
                None => {
                    taps.push((p.delay, vec![Complex::new(T::zero(), T::zero()); mn]));
                    taps.len() - 1
                }
            };
            let coef = &mut taps[idx].1;
            for (n, c) in coef.iter_mut().enumerate() {
                let src = (n + mn - p.delay) % mn;
                let ph = T::TAU() * p.doppler * T::of_usize(src) / T::of_usize(mn);
                *c = *c + p.gain * Complex::from_polar(T::one(), ph);
            }
        }
        taps.sort_by_key(|(d, _)| *d);
        Self { mn, taps }
    }

    pub fn dim(&self) -> usize {
        self.mn
    }

    /// Merged taps `(delay, per-row coefficient)`, ascending delay.
    pub fn taps(&self) -> &[(usize, Vec<Complex<T>>)] {
        &self.taps
    }

    pub fn max_delay(&self) -> usize {
        self.taps.last().map(|t| t.0).unwrap_or(0)
    }

    /// `H x`.
    pub fn apply(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        let mn = self.mn;
        let mut out = vec![Complex::new(T::zero(), T::zero()); mn];
        for (d, coef) in &self.taps {
            for n in 0..mn {
                out[n] = out[n] + coef[n] * x[(n + mn - d) % mn];
            }
        }
        out
    }

    /// `H^H y`.
    pub fn apply_adjoint(&self, y: &[Complex<T>]) -> Vec<Complex<T>> {
        let mn = self.mn;
        let mut out = vec![Complex::new(T::zero(), T::zero()); mn];
        for (d, coef) in &self.taps {
            for n in 0..mn {
                let j = (n + mn - d) % mn;
                out[j] = out[j] + coef[n].conj() * y[n];
            }
        }
        out
    }

    /// Non-zeros `(row, value)` of column `j`.
    pub fn column(&self, j: usize) -> Vec<(usize, Complex<T>)> {
        self.taps
            .iter()
            .map(|(d, coef)| {
                let r = (j + d) % self.mn;
                (r, coef[r])
            })
            .collect()
    }

    pub fn to_dense(&self) -> CMatrix<T> {
        let mn = self.mn;
        let mut m = CMatrix::zeros(mn, mn);
        for (d, coef) in &self.taps {
            for n in 0..mn {
                let c = (n + mn - d) % mn;
                m.set(n, c, m.get(n, c) + coef[n]);
            }
        }
        m
    }
}

/// Dense effective channel in one domain.
#[derive(Debug, Clone)]
pub struct EffectiveChannel<T: Real = f64> {
    pub domain: Domain,
    pub matrix: CMatrix<T>,
    pub source: PathSet<T>,
}

/// `H_TD = sum_p h_p Pi^{l_p} Delta^{k_p + kappa_p}`.
pub fn td_effective_channel<T: Real>(paths: &PathSet<T>) -> EffectiveChannel<T> {
    EffectiveChannel {
        domain: Domain::Td,
        matrix: paths.td_operator().to_dense(),
        source: paths.clone(),
    }
}

fn conjugated<T: Real>(
    paths: &PathSet<T>,
    pre: impl Fn(&mut [Complex<T>], usize, usize),
    post: impl Fn(&mut [Complex<T>], usize, usize),
) -> CMatrix<T> {
    let (m, n) = (paths.frame.m, paths.frame.n);
    let op = paths.td_operator();
    let mn = m * n;
    let cols = (0..mn)
        .map(|j| {
            let mut e = vec![Complex::new(T::zero(), T::zero()); mn];
            e[j] = Complex::new(T::one(), T::zero());
            pre(&mut e, m, n);
            let mut y = op.apply(&e);
            post(&mut y, m, n);
            y
        })
        .collect();
    CMatrix::from_columns(mn, cols).expect("square")
}

/// `H_DD = (F_N (x) I_M) H_TD (F_N^H (x) I_M)`, one FFT pair per column.
pub fn dd_effective_channel<T: Real>(paths: &PathSet<T>) -> EffectiveChannel<T> {
    EffectiveChannel {
        domain: Domain::Dd,
        matrix: conjugated(paths, transforms::doppler_ifft, transforms::doppler_fft),
        source: paths.clone(),
    }
}

/// `H_TF = (I_N (x) F_M) H_TD (I_N (x) F_M^H)`.
pub fn tf_effective_channel<T: Real>(paths: &PathSet<T>) -> EffectiveChannel<T> {
    EffectiveChannel {
        domain: Domain::Tf,
        matrix: conjugated(paths, transforms::delay_ifft, transforms::delay_fft),
        source: paths.clone(),
    }
}

/// `H_DD x` for a DD vector without forming the matrix.
pub fn dd_apply<T: Real>(
    op: &TdOperator<T>,
    x_dd: &[Complex<T>],
    m: usize,
    n: usize,
) -> Vec<Complex<T>> {
    let mut t = x_dd.to_vec();
    transforms::doppler_ifft(&mut t, m, n);
    let mut y = op.apply(&t);
    transforms::doppler_fft(&mut y, m, n);
    y
}

/// `H_DD^H y`.
pub fn dd_apply_adjoint<T: Real>(
    op: &TdOperator<T>,
    y_dd: &[Complex<T>],
    m: usize,
    n: usize,
) -> Vec<Complex<T>> {
    let mut t = y_dd.to_vec();
    transforms::doppler_ifft(&mut t, m, n);
    let mut x = op.apply_adjoint(&t);
    transforms::doppler_fft(&mut x, m, n);
    x
}

/// `D(x) = sum_{n<N} e^{j2 pi n x/N} = e^{j pi (N-1) x/N} sin(pi x)/sin(pi x/N)`.
pub fn dirichlet<T: Real>(x: T, n: usize) -> Complex<T> {
    let nn = T::of_usize(n);
    let den = (T::PI() * x / nn).sin();
    if den.abs() < T::of(1e-9) {
        let mut acc = Complex::new(T::zero(), T::zero());
        for s in 0..n {
            acc = acc + Complex::from_polar(T::one(), T::TAU() * T::of_usize(s) * x / nn);
        }
        return acc;
    }
    let amp = (T::PI() * x).sin() / den;
    Complex::from_polar(amp, T::PI() * (nn - T::one()) * x / nn)
}

/// Wrapped delay `l' = [l - l_p]_M` and the quasi-periodicity phase for output bin `k`.
fn wrap<T: Real>(l: usize, lp: usize, m: usize, k: usize, n: usize) -> (usize, Complex<T>) {
    if l >= lp {
        (l - lp, Complex::new(T::one(), T::zero()))
    } else {
        let ph = -T::TAU() * T::of_usize(k) / T::of_usize(n);
        (l + m - lp, Complex::from_polar(T::one(), ph))
    }
}

/// Closed-form DD input-output relation for integer Doppler.
///
/// `Y[l,k] = sum_p h_p alpha e^{j2 pi k_p l'/(MN)} X[l', [k - k_p]_N]` with
/// `l' = [l - l_p]_M` and `alpha = 1` for `l >= l_p`, else `e^{-j2 pi k/N}`.
pub fn dd_io_integer<T: Real>(x: &Grid<T>, paths: &PathSet<T>) -> Result<Grid<T>> {
    if !paths.is_integer_doppler() {
        return Err(Error::Unsupported(
            "integer DD relation called with fractional Doppler".into(),
        ));
    }
    let (m, n) = (paths.frame.m, paths.frame.n);
    check_grid(x, m, n)?;
    let mn = T::of_usize(m * n);
    Ok(Grid::from_fn(m, n, |l, k| {
        let mut acc = Complex::new(T::zero(), T::zero());
        for p in &paths.paths {
            let kp = p.doppler.to_i64().unwrap_or(0);
            let (lw, alpha) = wrap::<T>(l, p.delay, m, k, n);
            let ph = Complex::from_polar(T::one(), T::TAU() * p.doppler * T::of_usize(lw) / mn);
            let ks = (k as i64 - kp).rem_euclid(n as i64) as usize;
            acc = acc + p.gain * alpha * ph * x.get(lw, ks);
        }
        acc
    }))
}

/// Closed-form DD relation for integer delay and arbitrary real Doppler
/// (Dirichlet-kernel leakage across Doppler bins).
pub fn dd_io_fractional<T: Real>(x: &Grid<T>, paths: &PathSet<T>) -> Result<Grid<T>> {
    let (m, n) = (paths.frame.m, paths.frame.n);
    check_grid(x, m, n)?;
    let mn = T::of_usize(m * n);
    let inv_n = T::one() / T::of_usize(n);
    // Kernel depends only on (path, k - k').
    let kernels: Vec<Vec<Complex<T>>> = paths
        .paths
        .iter()
        .map(|p| {
            (0..n)
                .map(|d| dirichlet(p.doppler - T::of_usize(d), n) * inv_n)
                .collect()
        })
        .collect();
    Ok(Grid::from_fn(m, n, |l, k| {
        let mut acc = Complex::new(T::zero(), T::zero());
        for (p, ker) in paths.paths.iter().zip(&kernels) {
            let (lw, alpha) = wrap::<T>(l, p.delay, m, k, n);
            let ph = Complex::from_polar(T::one(), T::TAU() * p.doppler * T::of_usize(lw) / mn);
            let mut s = Complex::new(T::zero(), T::zero());
            for kp in 0..n {
                s = s + ker[(k + n - kp) % n] * x.get(lw, kp);
            }
            acc = acc + p.gain * alpha * ph * s;
        }
        acc
    }))
}

fn check_grid<T: Real>(x: &Grid<T>, m: usize, n: usize) -> Result<()> {
    if x.rows() != m || x.cols() != n {
        return Err(Error::dim(format!(
            "grid is {}x{}, channel frame is {m}x{n}",
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

/// Power-delay profile used when drawing random path sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerDelayProfile {
    /// Equal mean power per path.
    #[default]
    Uniform,
    /// Mean power proportional to `e^{-exponent * l_p}`.
    Exponential { exponent: f64 },
}

/// Random channel generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub paths: usize,
    pub l_max: usize,
    pub k_max: f64,
    #[serde(default)]
    pub profile: PowerDelayProfile,
    #[serde(default)]
    pub fractional: bool,
    #[serde(default)]
    pub distinct_delays: bool,
}

/// Circularly symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex<f64> {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(re * s, im * s)
}

/// Draws a random path set: delays uniform on `{0..l_max}`, Dopplers uniform on
/// `[-k_max, k_max]` (integers when not fractional), Rayleigh gains weighted by the
/// profile and normalised to unit total mean energy.
pub fn generate_channel<T: Real, R: Rng + ?Sized>(
    frame: FrameParams,
    spec: &ChannelSpec,
    rng: &mut R,
) -> Result<PathSet<T>> {
    if spec.paths == 0 {
        return Err(Error::param("P must be at least 1"));
    }
    if spec.l_max >= frame.m {
        return Err(Error::param(format!(
            "l_max = {} must be below M = {}",
            spec.l_max, frame.m
        )));
    }
    if !(spec.k_max >= 0.0) || spec.k_max > frame.n as f64 / 2.0 {
        return Err(Error::param(format!(
            "k_max = {} must lie in [0, N/2]",
            spec.k_max
        )));
    }
    if spec.distinct_delays && spec.paths > spec.l_max + 1 {
        return Err(Error::param("more paths than distinct delay taps"));
    }
    let mut delays = Vec::with_capacity(spec.paths);
    while delays.len() < spec.paths {
        let d = rng.random_range(0..=spec.l_max);
        if spec.distinct_delays && delays.contains(&d) {
            continue;
        }
        delays.push(d);
    }
    let dopplers: Vec<f64> = (0..spec.paths)
        .map(|_| {
            if spec.fractional {
                rng.random_range(-spec.k_max..=spec.k_max)
            } else {
                let k = spec.k_max.floor() as i64;
                rng.random_range(-k..=k) as f64
            }
        })
        .collect();
    let weights: Vec<f64> = delays
        .iter()
        .map(|&l| match spec.profile {
            PowerDelayProfile::Uniform => 1.0,
            PowerDelayProfile::Exponential { exponent } => (-exponent * l as f64).exp(),
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let paths = delays
        .iter()
        .zip(&dopplers)
        .zip(&weights)
        .map(|((&l, &k), &w)| {
            let g = complex_gaussian(rng, w / total);
            Path::new(Complex::new(T::of(g.re), T::of(g.im)), l, T::of(k))
        })
        .collect();
    PathSet::new(frame, paths)
}

/// Shape of the channel scattering function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScatteringKind {
    /// Uniform delay on `[0, tau0]`, uniform Doppler on `[-nu_max, nu_max]`.
    UniformDelayUniformDoppler,
    /// Exponential delay with decay `tau0`, Jakes Doppler with maximum `nu_max`.
    ExponentialDelayJakesDoppler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringProfile {
    pub kind: ScatteringKind,
    /// Seconds: decay constant (exponential) or maximum delay (uniform).
    pub tau0: f64,
    /// Hz.
    pub nu_max: f64,
    pub path_loss: f64,
}

/// Second-order channel statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringStats {
    pub path_loss: f64,
    pub mean_delay: f64,
    pub mean_doppler: f64,
    pub delay_spread: f64,
    pub doppler_spread: f64,
    pub coherence_time: f64,
    pub coherence_bandwidth: f64,
}

impl ScatteringProfile {
    pub fn delay_density(&self, tau: f64) -> f64 {
        match self.kind {
            ScatteringKind::UniformDelayUniformDoppler => {
                if (0.0..=self.tau0).contains(&tau) {
                    self.path_loss / self.tau0
                } else {
                    0.0
                }
            }
            ScatteringKind::ExponentialDelayJakesDoppler => {
                if tau >= 0.0 {
                    self.path_loss / self.tau0 * (-tau / self.tau0).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn doppler_density(&self, nu: f64) -> f64 {
        if nu.abs() >= self.nu_max {
            return 0.0;
        }
        match self.kind {
            ScatteringKind::UniformDelayUniformDoppler => self.path_loss / (2.0 * self.nu_max),
            ScatteringKind::ExponentialDelayJakesDoppler => {
                self.path_loss / (std::f64::consts::PI * (self.nu_max.powi(2) - nu * nu).sqrt())
            }
        }
    }

    /// `int g(tau) C_Delay(tau) d tau`.
    fn delay_moment(&self, g: impl Fn(f64) -> f64) -> f64 {
        match self.kind {
            ScatteringKind::UniformDelayUniformDoppler => {
                integrate(|t| g(t) * self.delay_density(t), 0.0, self.tau0, 1e-10)
            }
            ScatteringKind::ExponentialDelayJakesDoppler => {
                // tau = tau0 u/(1-u) maps [0, inf) onto [0, 1).
                let t0 = self.tau0;
                integrate(
                    |u| {
                        let tau = t0 * u / (1.0 - u);
                        g(tau) * self.delay_density(tau) * t0 / (1.0 - u).powi(2)
                    },
                    0.0,
                    1.0,
                    1e-10,
                )
            }
        }
    }

    /// `int g(nu) C_Doppler(nu) d nu`.
    fn doppler_moment(&self, g: impl Fn(f64) -> f64) -> f64 {
        let vm = self.nu_max;
        match self.kind {
            ScatteringKind::UniformDelayUniformDoppler => {
                integrate(|v| g(v) * self.doppler_density(v), -vm, vm, 1e-10)
            }
            ScatteringKind::ExponentialDelayJakesDoppler => {
                // nu = nu_max sin(theta) removes the endpoint singularity.
                let h = std::f64::consts::FRAC_PI_2;
                integrate(
                    |th| g(vm * th.sin()) * self.path_loss / std::f64::consts::PI,
                    -h,
                    h,
                    1e-10,
                )
            }
        }
    }
}

/// Path loss, mean delay/Doppler, spreads and coherence time/bandwidth by quadrature.
pub fn scattering_stats(profile: &ScatteringProfile) -> Result<ScatteringStats> {
    if !(profile.tau0 > 0.0 && profile.nu_max > 0.0 && profile.path_loss > 0.0) {
        return Err(Error::param(
            "scattering profile parameters must be positive",
        ));
    }
    let rho = profile.delay_moment(|_| 1.0);
    let mean_delay = profile.delay_moment(|t| t) / rho;
    let delay_var = profile.delay_moment(|t| (t - mean_delay).powi(2)) / rho;
    let rho_nu = profile.doppler_moment(|_| 1.0);
    let mean_doppler = profile.doppler_moment(|v| v) / rho_nu;
    let doppler_var = profile.doppler_moment(|v| (v - mean_doppler).powi(2)) / rho_nu;
    let stats = ScatteringStats {
        path_loss: rho,
        mean_delay,
        mean_doppler,
        delay_spread: delay_var.sqrt(),
        doppler_spread: doppler_var.sqrt(),
        coherence_time: 1.0 / doppler_var.sqrt(),
        coherence_bandwidth: 1.0 / delay_var.sqrt(),
    };
    let vals = [
        stats.path_loss,
        stats.mean_delay,
        stats.mean_doppler,
        stats.delay_spread,
        stats.doppler_spread,
    ];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("scattering moments diverged".into()));
    }
    Ok(stats)
}

/// TF sampling reconstruction bound `2(sigma_tau^2 F^2 + sigma_nu^2 T^2)`.
pub fn tf_sampling_error_bound(delay_spread: f64, doppler_spread: f64, t: f64, f: f64) -> f64 {
    2.0 * (delay_spread.powi(2) * f * f + doppler_spread.powi(2) * t * t)
}

/// Minimising grid ratio `T/F = sigma_tau/sigma_nu` for a fixed product `T F`, and the
/// bound attained there. Both terms then equal `T F sigma_tau sigma_nu`, so the minimum is
/// `4 T F sigma_tau sigma_nu` (twice the commonly quoted `2 T F sigma_tau sigma_nu`).
pub fn tf_sampling_optimum(delay_spread: f64, doppler_spread: f64, tf_product: f64) -> (f64, f64) {
    (
        delay_spread / doppler_spread,
        4.0 * tf_product * delay_spread * doppler_spread,
    )
}

/// Mean-squared TF response variation over a `dt x df` region,
/// `2 pi [(dt/T_c)^2 + (df/F_c)^2]`.
pub fn coherence_region_bound(
    dt: f64,
    df: f64,
    coherence_time: f64,
    coherence_bandwidth: f64,
) -> f64 {
    2.0 * std::f64::consts::PI
        * ((dt / coherence_time).powi(2) + (df / coherence_bandwidth).powi(2))
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) quadrature to relative tolerance `rtol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> f64 {
    fn rec(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        whole: f64,
        err: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        if err <= tol || depth == 0 {
            return whole;
        }
        let m = 0.5 * (a + b);
        let (l, el) = gk15(f, a, m);
        let (r, er) = gk15(f, m, b);
        rec(f, a, m, l, el, tol / 2.0, depth - 1) + rec(f, m, b, r, er, tol / 2.0, depth - 1)
    }
    let (whole, err) = gk15(&f, a, b);
    let tol = (rtol * whole.abs()).max(1e-300);
    rec(&f, a, b, whole, err, tol, 40)
}
