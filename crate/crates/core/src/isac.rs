//! Spatially spread OTFS (SS-OTFS) for integrated sensing and communication.
//!
//! A base station with `N_BS` half-wavelength-spaced antennas spreads the TD frame of
//! each beam across the array with an `N_BS`-point DFT. On-grid angles then map to a
//! single angular index: transmit index `a = [N_BS - sin(phi) N_BS / 2]_{N_BS} + 1`
//! and receive index `a~ = [sin(phi) N_BS / 2]_{N_BS} + 1` (both 1-based).
//!
//! Vectors over the array are antenna-major: block `n` (0-based) holds the `MN`
//! samples of antenna / angular index `n + 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::td_shift;
use crate::channel::{complex_gaussian, Path, PathSet};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::transforms::{doppler_ifft, FrameParams};
use crate::C64;

const ON_GRID_TOL: f64 = 1e-9;

/// Transmit steering vector `(1/sqrt N_BS) [1, e^{j pi sin phi}, ..., e^{j pi (N_BS-1) sin phi}]`.
pub fn steering_vector(phi: f64, n_bs: usize) -> Vec<C64> {
    let s = 1.0 / (n_bs as f64).sqrt();
    (0..n_bs)
        .map(|n| C64::from_polar(s, std::f64::consts::PI * n as f64 * phi.sin()))
        .collect()
}

/// Unrounded 0-based transmit and receive angular positions in `[0, N_BS)`.
pub fn angular_position(phi: f64, n_bs: usize) -> (f64, f64) {
    let nb = n_bs as f64;
    let half = phi.sin() * nb / 2.0;
    ((nb - half).rem_euclid(nb), half.rem_euclid(nb))
}

/// 1-based `(a, a~)`, rounded to the nearest grid point.
pub fn angular_indices(phi: f64, n_bs: usize) -> (usize, usize) {
    let (a, r) = angular_position(phi, n_bs);
    let wrap = |x: f64| (x.round() as usize) % n_bs + 1;
    (wrap(a), wrap(r))
}

/// True when `sin(phi) N_BS / 2` is an integer.
pub fn is_on_grid(phi: f64, n_bs: usize) -> bool {
    let half = phi.sin() * n_bs as f64 / 2.0;
    (half - half.round()).abs() < ON_GRID_TOL
}

/// `(1/N) sum_{n<N} e^{j theta n}` in closed form.
fn geometric_mean_phase(theta: f64, n: usize) -> C64 {
    let half = theta / 2.0;
    let s = half.sin();
    if s.abs() < 1e-12 {
        // Every term is 1 when theta is a multiple of 2 pi.
        return C64::new(1.0, 0.0);
    }
    C64::from_polar(1.0, half * (n as f64 - 1.0)) * ((n as f64 * half).sin() / (n as f64 * s))
}

/// Angular-domain response of one path.
#[derive(Debug, Clone)]
pub struct AngularChannel {
    /// `[a(phi)^T F^H diag(sqrt alpha)]_c`, the downlink row seen by the user.
    pub comm_row: Vec<C64>,
    /// `[F a(phi)]_r [a(phi)^T F^H diag(sqrt alpha)]_c`, the round-trip radar block.
    pub radar_block: CMatrix<f64>,
}

/// Geometric sums of the angular-domain channel for direction `phi`.
pub fn angular_channel(phi: f64, alpha: &[f64], n_bs: usize) -> Result<AngularChannel> {
    if alpha.len() != n_bs {
        return Err(Error::dim(format!(
            "{} powers for {n_bs} antennas",
            alpha.len()
        )));
    }
    let pi = std::f64::consts::PI;
    let nb = n_bs as f64;
    let sp = phi.sin();
    let tx: Vec<C64> = (0..n_bs)
        .map(|c| geometric_mean_phase(pi * (sp + 2.0 * c as f64 / nb), n_bs))
        .collect();
    let rx: Vec<C64> = (0..n_bs)
        .map(|r| geometric_mean_phase(pi * (sp - 2.0 * r as f64 / nb), n_bs))
        .collect();
    let comm_row: Vec<C64> = tx
        .iter()
        .zip(alpha)
        .map(|(t, a)| t * a.max(0.0).sqrt())
        .collect();
    let radar_block = CMatrix::from_fn(n_bs, n_bs, |r, c| rx[r] * comm_row[c]);
    Ok(AngularChannel {
        comm_row,
        radar_block,
    })
}

/// Antenna indices (1-based) of the beam centred on `a`: `N_range + 1` contiguous
/// indices modulo `N_BS`, in ascending offset order.
pub fn beam_antenna_set(a: usize, n_range: usize, n_bs: usize) -> Result<Vec<usize>> {
    if n_range % 2 != 0 {
        return Err(Error::param(format!("N_range = {n_range} must be even")));
    }
    if a == 0 || a > n_bs || n_range >= n_bs {
        return Err(Error::param(format!(
            "index {a} / N_range {n_range} invalid for N_BS = {n_bs}"
        )));
    }
    let half = (n_range / 2) as i64;
    Ok((-half..=half)
        .map(|off| ((a as i64 - 1 + off).rem_euclid(n_bs as i64)) as usize + 1)
        .collect())
}

/// Per-antenna TD precoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Precoder {
    /// `W = Delta^{-nu^} Pi^{-l^} Pi^{l.} Delta^{k.}` built from estimated and virtual indices.
    Shift {
        est_delay: usize,
        est_doppler: f64,
        virtual_delay: usize,
        virtual_doppler: i64,
    },
    /// Arbitrary unitary matrix.
    Matrix(CMatrix<f64>),
}

impl Precoder {
    /// Accepts a dense precoder only if `W W^H = I` to `1e-10`.
    pub fn from_matrix(w: CMatrix<f64>) -> Result<Self> {
        let n = w.rows();
        if w.cols() != n {
            return Err(Error::dim(format!("precoder is {n}x{}", w.cols())));
        }
        let err = w.mul(&w.adjoint())?.max_abs_diff(&CMatrix::identity(n));
        if err > 1e-10 {
            return Err(Error::param(format!(
                "precoder is not unitary (deviation {err:.2e})"
            )));
        }
        Ok(Precoder::Matrix(w))
    }

    pub fn apply(&self, z: &[C64]) -> Vec<C64> {
        match self {
            Precoder::Shift {
                est_delay,
                est_doppler,
                virtual_delay,
                virtual_doppler,
            } => {
                let inner = td_shift(
                    z,
                    *virtual_delay as i64 - *est_delay as i64,
                    *virtual_doppler as f64,
                );
                td_shift(&inner, 0, -est_doppler)
            }
            Precoder::Matrix(w) => w.mul_vec(z).expect("precoder dimension checked by caller"),
        }
    }

    pub fn to_dense(&self, mn: usize) -> CMatrix<f64> {
        match self {
            Precoder::Matrix(w) => w.clone(),
            _ => {
                let cols = (0..mn)
                    .map(|j| {
                        let mut e = vec![C64::new(0.0, 0.0); mn];
                        e[j] = C64::new(1.0, 0.0);
                        self.apply(&e)
                    })
                    .collect();
                CMatrix::from_columns(mn, cols).expect("square by construction")
            }
        }
    }
}

/// One precoder per path; virtual delays and virtual Dopplers must each be pairwise distinct.
pub fn precoding_matrices(
    estimates: &[(usize, f64)],
    virtual_indices: &[(usize, i64)],
) -> Result<Vec<Precoder>> {
    if estimates.len() != virtual_indices.len() {
        return Err(Error::dim(format!(
            "{} estimates for {} virtual indices",
            estimates.len(),
            virtual_indices.len()
        )));
    }
    for i in 0..virtual_indices.len() {
        for j in 0..i {
            if virtual_indices[i].0 == virtual_indices[j].0
                || virtual_indices[i].1 == virtual_indices[j].1
            {
                return Err(Error::param(format!(
                    "virtual indices {:?} and {:?} collide",
                    virtual_indices[j], virtual_indices[i]
                )));
            }
        }
    }
    Ok(estimates
        .iter()
        .zip(virtual_indices)
        .map(|(&(l, nu), &(vl, vk))| Precoder::Shift {
            est_delay: l,
            est_doppler: nu,
            virtual_delay: vl,
            virtual_doppler: vk,
        })
        .collect())
}

/// Default virtual indices `(p, p)` for `p = 0..P`.
pub fn default_virtual_indices(p: usize) -> Vec<(usize, i64)> {
    (0..p).map(|i| (i, i as i64)).collect()
}

/// Distinct random virtual delays in `0..delay_range` and Dopplers in `[-k, k]`.
pub fn random_virtual_indices<R: Rng + ?Sized>(
    p: usize,
    delay_range: usize,
    k: i64,
    rng: &mut R,
) -> Result<Vec<(usize, i64)>> {
    if p > delay_range || p as i64 > 2 * k + 1 {
        return Err(Error::param("not enough distinct virtual indices"));
    }
    let mut out: Vec<(usize, i64)> = Vec::with_capacity(p);
    while out.len() < p {
        let c = (rng.random_range(0..delay_range), rng.random_range(-k..=k));
        if out.iter().all(|o| o.0 != c.0 && o.1 != c.1) {
            out.push(c);
        }
    }
    Ok(out)
}

/// `s = ((F^H diag(sqrt alpha)) (x) I_MN) W (I (x) F_N^H (x) I_M) x` for per-antenna DD
/// blocks `x` (antenna-major, `N_BS * MN` entries). Missing precoders act as identity.
pub fn ss_transmit(
    x_dd: &[C64],
    frame: &FrameParams,
    precoders: &[Option<Precoder>],
    alpha: &[f64],
) -> Result<Vec<C64>> {
    let mn = frame.mn();
    let n_bs = alpha.len();
    if x_dd.len() != n_bs * mn || precoders.len() != n_bs {
        return Err(Error::dim(format!(
            "{} samples, {} precoders, {n_bs} antennas of {mn}",
            x_dd.len(),
            precoders.len()
        )));
    }
    let mut z = Vec::with_capacity(n_bs * mn);
    for (a, block) in x_dd.chunks(mn).enumerate() {
        let mut t = block.to_vec();
        doppler_ifft(&mut t, frame.m, frame.n);
        if let Some(w) = &precoders[a] {
            if let Precoder::Matrix(m) = w {
                if m.rows() != mn {
                    return Err(Error::dim(format!("precoder {} vs MN = {mn}", m.rows())));
                }
            }
            t = w.apply(&t);
        }
        let g = alpha[a].max(0.0).sqrt();
        z.extend(t.into_iter().map(|v| v * g));
    }
    Ok(spatial_dft(&z, n_bs, mn, false))
}

/// `(F (x) I_MN) s`: spatial de-spreading of an antenna-major array vector.
pub fn ss_despread(s: &[C64], n_bs: usize) -> Vec<C64> {
    spatial_dft(s, n_bs, s.len() / n_bs.max(1), true)
}

fn spatial_dft(s: &[C64], n_bs: usize, mn: usize, forward: bool) -> Vec<C64> {
    let sign = if forward { -1.0 } else { 1.0 };
    let scale = 1.0 / (n_bs as f64).sqrt();
    let tw: Vec<C64> = (0..n_bs)
        .map(|k| C64::from_polar(scale, sign * std::f64::consts::TAU * k as f64 / n_bs as f64))
        .collect();
    let mut out = vec![C64::new(0.0, 0.0); n_bs * mn];
    for r in 0..n_bs {
        for c in 0..n_bs {
            let w = tw[(r * c) % n_bs];
            let (dst, src) = (&mut out[r * mn..(r + 1) * mn], &s[c * mn..(c + 1) * mn]);
            dst.iter_mut().zip(src).for_each(|(d, v)| *d += w * v);
        }
    }
    out
}

/// One sensed path of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsacTarget {
    /// Angle of departure in radians.
    pub aod: f64,
    pub comm_gain: C64,
    pub radar_gain: C64,
    /// One-way delay tap.
    pub delay: usize,
    /// One-way Doppler index.
    pub doppler: f64,
}

impl IsacTarget {
    /// Round-trip delay `2 l`.
    pub fn radar_delay(&self) -> usize {
        2 * self.delay
    }

    /// Round-trip Doppler `2 nu`.
    pub fn radar_doppler(&self) -> f64 {
        2.0 * self.doppler
    }
}

/// Block-sparse TDA-domain radar sensing operator.
#[derive(Debug, Clone)]
pub struct RadarSensing {
    pub n_bs: usize,
    pub mn: usize,
    /// `(rx block, tx block, sqrt(alpha_a) h~, delay, Doppler)`, 0-based blocks.
    pub blocks: Vec<(usize, usize, C64, usize, f64)>,
}

impl RadarSensing {
    pub fn apply(&self, z: &[C64]) -> Vec<C64> {
        let mn = self.mn;
        let mut out = vec![C64::new(0.0, 0.0); self.n_bs * mn];
        for &(r, c, g, l, nu) in &self.blocks {
            let y = td_shift(&z[c * mn..(c + 1) * mn], l as i64, nu);
            out[r * mn..(r + 1) * mn]
                .iter_mut()
                .zip(y)
                .for_each(|(o, v)| *o += g * v);
        }
        out
    }

    pub fn to_dense(&self) -> CMatrix<f64> {
        let n = self.n_bs * self.mn;
        let cols = (0..n)
            .map(|j| {
                let mut e = vec![C64::new(0.0, 0.0); n];
                e[j] = C64::new(1.0, 0.0);
                self.apply(&e)
            })
            .collect();
        CMatrix::from_columns(n, cols).expect("square by construction")
    }
}

/// Radar sensing operator for on-grid targets; `alpha` is the per-antenna power.
pub fn radar_sensing_matrix(
    targets: &[IsacTarget],
    frame: &FrameParams,
    alpha: &[f64],
) -> Result<RadarSensing> {
    let n_bs = alpha.len();
    let mn = frame.mn();
    let mut blocks: Vec<(usize, usize, C64, usize, f64)> = Vec::with_capacity(targets.len());
    for t in targets {
        if !is_on_grid(t.aod, n_bs) {
            return Err(Error::Unsupported(format!(
                "AoD {:.6} rad is off the angular grid of {n_bs} antennas",
                t.aod
            )));
        }
        let (a, r) = angular_indices(t.aod, n_bs);
        if blocks.iter().any(|b| b.1 == a - 1) {
            return Err(Error::param(format!("two targets share angular index {a}")));
        }
        blocks.push((
            r - 1,
            a - 1,
            t.radar_gain * alpha[a - 1].max(0.0).sqrt(),
            t.radar_delay() % mn,
            t.radar_doppler(),
        ));
    }
    Ok(RadarSensing { n_bs, mn, blocks })
}

/// Receive angular indices (1-based) of the `kp` blocks with the largest mean power,
/// strongest first. Each sample is a de-spread array vector of `N_BS * MN` entries.
pub fn aoa_estimate(samples: &[Vec<C64>], n_bs: usize, kp: usize) -> Result<Vec<usize>> {
    if kp > n_bs {
        return Err(Error::param(format!(
            "cannot pick {kp} of {n_bs} angular indices"
        )));
    }
    if samples.is_empty() {
        return Err(Error::param(
            "AoA estimation needs at least one sample frame",
        ));
    }
    let len = samples[0].len();
    if len % n_bs != 0 || samples.iter().any(|s| s.len() != len) {
        return Err(Error::dim(
            "sample frames must share a length divisible by N_BS",
        ));
    }
    let mn = len / n_bs;
    let mut power = vec![0.0; n_bs];
    for s in samples {
        for (b, chunk) in s.chunks(mn).enumerate() {
            power[b] += chunk.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
    }
    let mut order: Vec<usize> = (0..n_bs).collect();
    order.sort_by(|&i, &j| power[j].total_cmp(&power[i]).then(i.cmp(&j)));
    Ok(order[..kp].iter().map(|i| i + 1).collect())
}

/// Max-min radar allocation `alpha_p = (alpha_total / (N_range + 1)) (1/g_p) / sum_q 1/g_q`.
pub fn radar_power_allocation(
    radar_gains_sq: &[f64],
    alpha_total: f64,
    n_range: usize,
) -> Result<Vec<f64>> {
    if radar_gains_sq.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::param("radar gains must be positive"));
    }
    let inv: f64 = radar_gains_sq.iter().map(|g| 1.0 / g).sum();
    let scale = alpha_total / (n_range as f64 + 1.0) / inv;
    Ok(radar_gains_sq.iter().map(|g| scale / g).collect())
}

/// Equal split of a user's power over its `p` paths.
pub fn comm_power_allocation(alpha_user_total: f64, p: usize) -> Vec<f64> {
    vec![alpha_user_total / p.max(1) as f64; p]
}

/// One path of a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPath {
    pub aod_deg: f64,
    pub comm_gain: C64,
    pub radar_gain: C64,
    pub delay: usize,
    pub doppler: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioUser {
    pub paths: Vec<ScenarioPath>,
}

fn default_m() -> usize {
    16
}

fn default_n() -> usize {
    8
}

/// Scenario JSON: `{n_bs, users: [{paths: [...]}], alpha_total, n_range}` with optional
/// frame size `m`, `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_bs: usize,
    pub users: Vec<ScenarioUser>,
    pub alpha_total: f64,
    pub n_range: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_n")]
    pub n: usize,
}

/// Power allocation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    Equal,
    Radar,
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario =
            serde_json::from_str(s).map_err(|e| Error::config("scenario", e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bs == 0 || self.users.is_empty() || self.users.iter().any(|u| u.paths.is_empty())
        {
            return Err(Error::config("scenario", "needs antennas, users and paths"));
        }
        if self.n_range % 2 != 0 || self.n_range >= self.n_bs {
            return Err(Error::config(
                "scenario.n_range",
                "must be even and below n_bs",
            ));
        }
        if !(self.alpha_total > 0.0) {
            return Err(Error::config("scenario.alpha_total", "must be positive"));
        }
        self.frame()?;
        Ok(())
    }

    pub fn frame(&self) -> Result<FrameParams> {
        let f = FrameParams::grid(self.m, self.n);
        f.validate()?;
        Ok(f)
    }

    pub fn targets(&self) -> Vec<IsacTarget> {
        self.users
            .iter()
            .flat_map(|u| u.paths.iter())
            .map(|p| IsacTarget {
                aod: p.aod_deg.to_radians(),
                comm_gain: p.comm_gain,
                radar_gain: p.radar_gain,
                delay: p.delay,
                doppler: p.doppler,
            })
            .collect()
    }

    /// Per-path power under the rule; equal allocation splits evenly across all paths.
    pub fn path_powers(&self, rule: Allocation) -> Result<Vec<f64>> {
        let t = self.targets();
        match rule {
            Allocation::Equal => Ok(vec![
                self.alpha_total / ((self.n_range + 1) * t.len()) as f64;
                t.len()
            ]),
            Allocation::Radar => {
                let g: Vec<f64> = t.iter().map(|p| p.radar_gain.norm_sqr()).collect();
                radar_power_allocation(&g, self.alpha_total, self.n_range)
            }
        }
    }

    /// Per-antenna power: every antenna in a path's beam carries that path's power.
    /// Beams must be disjoint.
    pub fn antenna_powers(&self, rule: Allocation) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
        let powers = self.path_powers(rule)?;
        let mut alpha = vec![0.0; self.n_bs];
        let mut used = vec![false; self.n_bs];
        let mut beams = Vec::with_capacity(powers.len());
        for (t, &p) in self.targets().iter().zip(&powers) {
            let (a, _) = angular_indices(t.aod, self.n_bs);
            let set = beam_antenna_set(a, self.n_range, self.n_bs)?;
            for &i in &set {
                if used[i - 1] {
                    return Err(Error::param(format!("beams overlap at antenna {i}")));
                }
                used[i - 1] = true;
                alpha[i - 1] = p;
            }
            beams.push(set);
        }
        Ok((alpha, beams))
    }
}

/// Result of one sensing trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingOutcome {
    pub estimated: Vec<usize>,
    pub truth: Vec<usize>,
    pub miss: bool,
}

/// Radar noise for a radar SNR, taken as mean per-antenna transmit power over `N~_0`.
pub fn radar_noise(scenario: &Scenario, radar_snr_db: f64) -> f64 {
    let active = (scenario.n_range + 1) * scenario.targets().len();
    scenario.alpha_total / active as f64 * 10f64.powf(-radar_snr_db / 10.0)
}

/// One trial: random QPSK beams, transmit, radar echo plus AWGN, trace-based AoA estimation.
pub fn sensing_trial<R: Rng + ?Sized>(
    scenario: &Scenario,
    rule: Allocation,
    radar_snr_db: f64,
    rng: &mut R,
) -> Result<SensingOutcome> {
    let frame = scenario.frame()?;
    let mn = frame.mn();
    let n_bs = scenario.n_bs;
    let targets = scenario.targets();
    let (alpha, beams) = scenario.antenna_powers(rule)?;
    let qpsk = crate::modem::Constellation::Qpsk;
    let mut x = vec![C64::new(0.0, 0.0); n_bs * mn];
    for set in &beams {
        let data: Vec<C64> = qpsk
            .random_indices(mn, rng)
            .into_iter()
            .map(|i| qpsk.point(i))
            .collect();
        for &a in set {
            x[(a - 1) * mn..a * mn].copy_from_slice(&data);
        }
    }
    let s = ss_transmit(&x, &frame, &vec![None; n_bs], &alpha)?;
    let z = ss_despread(&s, n_bs);
    // De-spread transmit vector carries sqrt(alpha) per block; the sensing operator applies it again.
    let z: Vec<C64> = z
        .chunks(mn)
        .zip(&alpha)
        .flat_map(|(c, &a)| {
            let g = if a > 0.0 { 1.0 / a.sqrt() } else { 0.0 };
            c.iter().map(move |v| v * g)
        })
        .collect();
    let op = radar_sensing_matrix(&targets, &frame, &alpha)?;
    let n0 = radar_noise(scenario, radar_snr_db);
    let y: Vec<C64> = op
        .apply(&z)
        .into_iter()
        .map(|v| v + complex_gaussian(rng, n0))
        .collect();
    let estimated = aoa_estimate(&[y], n_bs, targets.len())?;
    let mut truth: Vec<usize> = targets
        .iter()
        .map(|t| angular_indices(t.aod, n_bs).1)
        .collect();
    truth.sort_unstable();
    let mut sorted = estimated.clone();
    sorted.sort_unstable();
    let miss = sorted != truth;
    Ok(SensingOutcome {
        estimated,
        truth,
        miss,
    })
}

/// Downlink channel of one user: each path reaches the user through its own beam with
/// power `alpha`. With precoding (perfect estimates), path `p` collapses to the
/// virtual path `(p, p)`.
pub fn user_channel(
    scenario: &Scenario,
    user: usize,
    rule: Allocation,
    precoded: bool,
) -> Result<PathSet<f64>> {
    let frame = scenario.frame()?;
    let powers = scenario.path_powers(rule)?;
    let offset: usize = scenario.users[..user].iter().map(|u| u.paths.len()).sum();
    let paths = &scenario.users[user].paths;
    let virt = default_virtual_indices(paths.len());
    let list = paths
        .iter()
        .enumerate()
        .map(|(p, sp)| {
            let g = sp.comm_gain * powers[offset + p].sqrt();
            if precoded {
                Path::new(g, virt[p].0, virt[p].1 as f64)
            } else {
                Path::new(g, sp.delay, sp.doppler)
            }
        })
        .collect();
    PathSet::new(frame, list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{codeword_difference_matrix, eigen_product_bounds};
    use crate::transforms::{dd_to_td, dft_matrix, Domain, DomainVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn on_grid_phi(a: usize, n_bs: usize) -> f64 {
        // sin(phi) = -2 (a - 1) / N_BS, folded into [-1, 1].
        let mut s = -2.0 * (a as f64 - 1.0) / n_bs as f64;
        if s < -1.0 {
            s += 2.0;
        }
        s.asin()
    }

    #[test]
    fn steering_examples() {
        let v = steering_vector(0.0, 4);
        assert!(v.iter().all(|c| (c - C64::new(0.5, 0.0)).norm() < 1e-15));
        let v = steering_vector(std::f64::consts::FRAC_PI_2, 4);
        for (n, c) in v.iter().enumerate() {
            let want = if n % 2 == 0 { 0.5 } else { -0.5 };
            assert!((c - C64::new(want, 0.0)).norm() < 1e-12);
        }
        let norm: f64 = steering_vector(0.37, 16).iter().map(|c| c.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angular_index_examples() {
        assert_eq!(angular_indices(0.0, 16), (1, 1));
        let phi = (2.0f64 / 16.0).asin();
        assert_eq!(angular_indices(phi, 16), (16, 2));
        assert_eq!(angular_indices(std::f64::consts::FRAC_PI_4, 128), (84, 46));
        assert!(!is_on_grid(std::f64::consts::FRAC_PI_4, 128));
    }

    #[test]
    fn angular_channel_matches_dense_product() {
        let n_bs = 8;
        let alpha: Vec<f64> = (0..n_bs).map(|i| 0.5 + i as f64 * 0.1).collect();
        let phi = 0.61;
        let ac = angular_channel(phi, &alpha, n_bs).unwrap();
        let f = CMatrix::from_row_major(n_bs, n_bs, dft_matrix(n_bs)).unwrap();
        let a = steering_vector(phi, n_bs);
        let fa = f.mul_vec(&a).unwrap();
        let fh = f.adjoint();
        for c in 0..n_bs {
            let t: C64 = (0..n_bs).map(|n| a[n] * fh.get(n, c)).sum::<C64>() * alpha[c].sqrt();
            assert!((ac.comm_row[c] - t).norm() < 1e-10);
            for r in 0..n_bs {
                assert!((ac.radar_block.get(r, c) - fa[r] * t).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn on_grid_structure_is_one_hot() {
        for n_bs in [2usize, 4, 8, 16, 32, 64, 128] {
            let alpha = vec![1.0; n_bs];
            for a in [1, n_bs / 2 + 1, n_bs] {
                let phi = on_grid_phi(a, n_bs);
                let (ai, ri) = angular_indices(phi, n_bs);
                assert_eq!(ai, a);
                let ac = angular_channel(phi, &alpha, n_bs).unwrap();
                let nz: Vec<usize> = (0..n_bs)
                    .filter(|&c| ac.comm_row[c].norm() > 1e-9)
                    .collect();
                assert_eq!(nz, vec![a - 1]);
                let mut count = 0;
                for r in 0..n_bs {
                    for c in 0..n_bs {
                        if ac.radar_block.get(r, c).norm() > 1e-9 {
                            assert_eq!((r, c), (ri - 1, a - 1));
                            count += 1;
                        }
                    }
                }
                assert_eq!(count, 1);
            }
        }
    }

    #[test]
    fn off_grid_peak_near_expected_indices() {
        let n_bs = 128;
        let ac = angular_channel(std::f64::consts::FRAC_PI_4, &vec![1.0; n_bs], n_bs).unwrap();
        let best = (0..n_bs)
            .max_by(|&i, &j| ac.comm_row[i].norm().total_cmp(&ac.comm_row[j].norm()))
            .unwrap();
        assert!((best as i64 + 1 - 84).abs() <= 1);
        let nz = ac.comm_row.iter().filter(|c| c.norm() > 1e-3).count();
        assert!(nz > 1);
    }

    #[test]
    fn beam_sets() {
        assert_eq!(beam_antenna_set(5, 0, 8).unwrap(), vec![5]);
        assert_eq!(beam_antenna_set(1, 2, 8).unwrap(), vec![8, 1, 2]);
        assert_eq!(beam_antenna_set(3, 4, 16).unwrap().len(), 5);
        assert!(beam_antenna_set(1, 3, 8).is_err());
    }

    #[test]
    fn power_allocations() {
        assert_eq!(
            radar_power_allocation(&[1.0, 4.0], 5.0, 0).unwrap(),
            vec![4.0, 1.0]
        );
        let eq = radar_power_allocation(&[2.0; 4], 12.0, 2).unwrap();
        assert!(eq.iter().all(|&a| (a - 1.0).abs() < 1e-12));
        assert!(radar_power_allocation(&[1.0, 0.0], 1.0, 0).is_err());
        let g = [0.3, 1.7, 0.9];
        let opt = radar_power_allocation(&g, 3.0, 0).unwrap();
        let min_opt = opt
            .iter()
            .zip(&g)
            .map(|(a, g)| a * g)
            .fold(f64::INFINITY, f64::min);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            let m = w
                .iter()
                .zip(&g)
                .map(|(a, g)| 3.0 * a / s * g)
                .fold(f64::INFINITY, f64::min);
            assert!(m <= min_opt + 1e-12);
        }
        let c = comm_power_allocation(2.0, 4);
        assert_eq!(c, vec![0.5; 4]);
        assert_eq!(comm_power_allocation(2.0, 1), vec![2.0]);
        let gm = |v: &[f64]| v.iter().map(|x| x.ln()).sum::<f64>();
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 1e-9).collect();
            let s: f64 = w.iter().sum();
            let split: Vec<f64> = w.iter().map(|v| 2.0 * v / s).collect();
            assert!(gm(&split) <= gm(&c) + 1e-12);
        }
    }

    #[test]
    fn precoders_are_unitary_and_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = [(1usize, 0.4), (3, -1.7), (3, 2.2)];
        let virt = random_virtual_indices(3, 8, 3, &mut rng).unwrap();
        for w in precoding_matrices(&est, &virt).unwrap() {
            let d = w.to_dense(32);
            assert!(
                d.mul(&d.adjoint())
                    .unwrap()
                    .max_abs_diff(&CMatrix::identity(32))
                    < 1e-12
            );
            assert!((d.frobenius_sq() - 32.0).abs() < 1e-9);
        }
        assert!(precoding_matrices(&est, &[(0, 0), (0, 1), (2, 2)]).is_err());
        assert!(precoding_matrices(&est, &[(0, 0), (1, 0), (2, 2)]).is_err());
        let bad = CMatrix::from_fn(2, 2, |_, _| C64::new(1.0, 0.0));
        assert!(Precoder::from_matrix(bad).is_err());
        assert!(Precoder::from_matrix(CMatrix::identity(4)).is_ok());
    }

    #[test]
    fn perfect_precoding_reaches_determinant_bound() {
        let frame = FrameParams::grid(4, 8);
        let mut e = vec![C64::new(0.0, 0.0); 32];
        e[5] = C64::new(2.0, 0.0);
        let est = [(1usize, 0.4), (1, -1.3), (2, 2.6)];
        let w = precoding_matrices(&est, &default_virtual_indices(3)).unwrap();
        let d: Vec<usize> = est.iter().map(|p| p.0).collect();
        let k: Vec<f64> = est.iter().map(|p| p.1).collect();
        let c = codeword_difference_matrix(&e, &d, &k, &frame, Some(&w)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 4.0 } else { 0.0 };
                assert!((c.omega.get(i, j) - C64::new(want, 0.0)).norm() < 1e-9);
            }
        }
        let b = eigen_product_bounds(&c).unwrap();
        assert!((b.det - b.det_ub).abs() < 1e-6 * b.det_ub);
    }

    #[test]
    fn single_antenna_reduces_to_otfs() {
        let frame = FrameParams::grid(4, 4);
        let x: Vec<C64> = (0..16)
            .map(|i| C64::new(i as f64, -(i as f64) * 0.5))
            .collect();
        let s = ss_transmit(&x, &frame, &[None], &[1.0]).unwrap();
        let td = dd_to_td(&DomainVector::new(Domain::Dd, frame, x.clone()).unwrap()).unwrap();
        for (a, b) in s.iter().zip(td.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn transmit_energy_and_despread() {
        let frame = FrameParams::grid(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n_bs = 4;
        let x: Vec<C64> = (0..n_bs * 8)
            .map(|_| complex_gaussian(&mut rng, 1.0))
            .collect();
        let alpha = [0.5, 1.0, 0.0, 2.0];
        let w = precoding_matrices(&[(1, 0.3)], &[(2, 1)])
            .unwrap()
            .remove(0);
        let pre = vec![Some(w), None, None, None];
        let s = ss_transmit(&x, &frame, &pre, &alpha).unwrap();
        let es: f64 = s.iter().map(|v| v.norm_sqr()).sum();
        let want: f64 = x
            .chunks(8)
            .zip(&alpha)
            .map(|(c, a)| a * c.iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum();
        assert!((es - want).abs() < 1e-10 * want);
        let z = ss_despread(&s, n_bs);
        let mut b1 = x[8..16].to_vec();
        doppler_ifft(&mut b1, 4, 2);
        for (a, b) in z[8..16].iter().zip(&b1) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(Precoder::from_matrix(CMatrix::identity(3)).is_ok());
    }

    #[test]
    fn radar_operator_examples() {
        let frame = FrameParams::grid(2, 4);
        let t = IsacTarget {
            aod: 0.0,
            comm_gain: C64::new(1.0, 0.0),
            radar_gain: C64::new(1.0, 0.0),
            delay: 0,
            doppler: 0.0,
        };
        let op = radar_sensing_matrix(&[t], &frame, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        let z: Vec<C64> = (0..32).map(|i| C64::new(i as f64, 1.0)).collect();
        let y = op.apply(&z);
        assert_eq!(&y[..8], &z[..8]);
        assert!(y[8..].iter().all(|v| v.norm() == 0.0));
        assert!(radar_sensing_matrix(&[t, t], &frame, &[1.0; 4]).is_err());
        let off = IsacTarget { aod: 0.3, ..t };
        assert!(radar_sensing_matrix(&[off], &frame, &[1.0; 4]).is_err());
    }

    #[test]
    fn radar_operator_matches_dense_kron() {
        let frame = FrameParams::grid(4, 2);
        let n_bs = 4;
        let alpha = [0.7, 1.3, 0.4, 1.6];
        let targets = [
            IsacTarget {
                aod: on_grid_phi(2, n_bs),
                comm_gain: C64::new(1.0, 0.0),
                radar_gain: C64::new(0.3, -0.8),
                delay: 1,
                doppler: 0.5,
            },
            IsacTarget {
                aod: on_grid_phi(4, n_bs),
                comm_gain: C64::new(1.0, 0.0),
                radar_gain: C64::new(-0.6, 0.2),
                delay: 0,
                doppler: -0.25,
            },
        ];
        let op = radar_sensing_matrix(&targets, &frame, &alpha).unwrap();
        let mn = 8;
        let mut dense = CMatrix::zeros(n_bs * mn, n_bs * mn);
        for t in &targets {
            let ac = angular_channel(t.aod, &alpha, n_bs).unwrap();
            let td = PathSet::new(
                frame,
                vec![Path::new(t.radar_gain, t.radar_delay(), t.radar_doppler())],
            )
            .unwrap()
            .td_operator()
            .to_dense();
            let k = ac.radar_block.kron(&td);
            dense = CMatrix::from_fn(n_bs * mn, n_bs * mn, |r, c| dense.get(r, c) + k.get(r, c));
        }
        assert!(op.to_dense().max_abs_diff(&dense) < 1e-10);
    }

    fn scenario() -> Scenario {
        let n_bs = 32;
        let mut users = Vec::new();
        for u in 0..4 {
            let paths = (0..2)
                .map(|p| {
                    let a = 1 + 4 * (2 * u + p);
                    ScenarioPath {
                        aod_deg: on_grid_phi(a, n_bs).to_degrees(),
                        comm_gain: C64::new(0.8, 0.1 * p as f64),
                        radar_gain: C64::new(1.0 - 0.1 * (2 * u + p) as f64, 0.0),
                        delay: p,
                        doppler: p as f64,
                    }
                })
                .collect();
            users.push(ScenarioUser { paths });
        }
        Scenario {
            n_bs,
            users,
            alpha_total: 24.0,
            n_range: 2,
            m: 16,
            n: 8,
        }
    }

    #[test]
    fn noiseless_block_power_identifies_targets() {
        let sc = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = sensing_trial(&sc, Allocation::Radar, 300.0, &mut rng).unwrap();
        assert!(!out.miss, "{out:?}");
        let (alpha, beams) = sc.antenna_powers(Allocation::Radar).unwrap();
        let total: f64 = alpha.iter().sum();
        assert!((total - sc.alpha_total).abs() < 1e-9);
        assert_eq!(beams.len(), 8);
    }

    #[test]
    fn scenario_json_roundtrip() {
        let sc = scenario();
        let s = serde_json::to_string(&sc).unwrap();
        assert_eq!(Scenario::from_json(&s).unwrap(), sc);
        assert!(Scenario::from_json("{\"n_bs\": 4}").is_err());
    }

    #[test]
    fn precoded_user_channel_is_virtual() {
        let sc = scenario();
        let ch = user_channel(&sc, 1, Allocation::Equal, true).unwrap();
        assert_eq!(ch.paths()[1].delay, 1);
        assert_eq!(ch.paths()[1].doppler, 1.0);
        let raw = user_channel(&sc, 1, Allocation::Equal, false).unwrap();
        assert!((ch.energy() - raw.energy()).abs() < 1e-12);
    }
}
