//! Rate-1/n feedforward convolutional codes, log-domain BCJR and turbo equalization.
//!
//! Generators are bit masks: bit `j` is the coefficient of `D^j`. LLRs are
//! `ln P(b = 0) / P(b = 1)`, and bit `b` maps to the BPSK point `1 - 2b`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::PathSet;
use crate::detect::{hybrid_map_pic_detect, map_spa_detect, HybridOptions};
use crate::error::{Error, Result};
use crate::modem::Constellation;
use crate::C64;

/// Bound on a-priori LLRs fed back to the detector. Kept well inside the range of
/// posterior LLRs so that the detector extrinsic survives saturated posteriors.
const LLR_CLIP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvCode {
    pub generators: Vec<u32>,
    pub memory: usize,
}

impl ConvCode {
    pub fn new(generators: Vec<u32>) -> Result<Self> {
        if generators.is_empty() || generators.len() > 32 || generators.iter().any(|&g| g == 0) {
            return Err(Error::param(
                "between 1 and 32 non-zero generators are required",
            ));
        }
        let memory = generators
            .iter()
            .map(|g| 31 - g.leading_zeros() as usize)
            .max()
            .unwrap_or(0);
        if memory > 16 {
            return Err(Error::param(format!("memory {memory} is too large")));
        }
        Ok(Self { generators, memory })
    }

    /// `[1 + D, D]`.
    pub fn code_a() -> Self {
        Self::new(vec![0b11, 0b10]).unwrap()
    }

    /// `[1 + D^2, 1 + D + D^2]`.
    pub fn code_b() -> Self {
        Self::new(vec![0b101, 0b111]).unwrap()
    }

    /// `[1 + D^2 + D^5, 1 + D + D^2 + D^3 + D^4 + D^5]`.
    pub fn code_c() -> Self {
        Self::new(vec![0b10_0101, 0b11_1111]).unwrap()
    }

    /// `[1 + D + D^2 + D^5 + D^6, 1 + D^2 + D^3 + D^4 + D^6]`.
    pub fn code_d() -> Self {
        Self::new(vec![0b110_0111, 0b101_1101]).unwrap()
    }

    /// Looks up `"a"`..`"d"` (case-insensitive).
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "a" => Ok(Self::code_a()),
            "b" => Ok(Self::code_b()),
            "c" => Ok(Self::code_c()),
            "d" => Ok(Self::code_d()),
            other => Err(Error::param(format!("unknown code `{other}`"))),
        }
    }

    /// Outputs per input bit.
    pub fn n_out(&self) -> usize {
        self.generators.len()
    }

    pub fn states(&self) -> usize {
        1 << self.memory
    }

    pub fn is_recursive(&self) -> bool {
        false
    }

    /// Information bits that fill `coded_len` coded bits after termination.
    pub fn info_len(&self, coded_len: usize) -> Result<usize> {
        let n = self.n_out();
        if coded_len % n != 0 || coded_len / n <= self.memory {
            return Err(Error::dim(format!(
                "{coded_len} coded bits cannot hold a terminated rate-1/{n} frame"
            )));
        }
        Ok(coded_len / n - self.memory)
    }

    /// `(next state, output bits packed with output 0 in bit 0)` for state `s`, input `u`.
    fn branch(&self, s: usize, u: usize) -> (usize, u32) {
        let reg = ((s << 1) | u) as u32;
        let mut out = 0;
        for (i, &g) in self.generators.iter().enumerate() {
            out |= ((g & reg).count_ones() & 1) << i;
        }
        (reg as usize & (self.states() - 1), out)
    }
}

/// Encodes and appends `memory` zero tail bits, so the trellis ends in state 0.
pub fn conv_encode(bits: &[u8], code: &ConvCode) -> Vec<u8> {
    let mut s = 0;
    let mut out = Vec::with_capacity((bits.len() + code.memory) * code.n_out());
    for &u in bits.iter().chain(std::iter::repeat_n(&0u8, code.memory)) {
        let (ns, o) = code.branch(s, (u & 1) as usize);
        for i in 0..code.n_out() {
            out.push(((o >> i) & 1) as u8);
        }
        s = ns;
    }
    out
}

/// `4 d_free`: the minimum squared Euclidean distance between BPSK codewords,
/// from a shortest-weight search over paths that leave and re-enter state 0 within
/// `search_depth` steps.
pub fn min_euclidean_distance(code: &ConvCode, search_depth: usize) -> Result<f64> {
    if search_depth < 3 * code.memory || search_depth == 0 {
        return Err(Error::param(format!(
            "search depth {search_depth} below 3 x memory = {}",
            3 * code.memory
        )));
    }
    let ns = code.states();
    let (first, o) = code.branch(0, 1);
    let mut best = u32::MAX;
    let mut dist = vec![u32::MAX; ns];
    if first == 0 {
        best = o.count_ones();
    } else {
        dist[first] = o.count_ones();
    }
    for _ in 1..search_depth {
        let mut next = vec![u32::MAX; ns];
        for s in 0..ns {
            if dist[s] == u32::MAX || dist[s] >= best {
                continue;
            }
            for u in 0..2 {
                let (t, o) = code.branch(s, u);
                let w = dist[s] + o.count_ones();
                if t == 0 {
                    best = best.min(w);
                } else if w < next[t] {
                    next[t] = w;
                }
            }
        }
        dist = next;
    }
    if best == u32::MAX {
        return Err(Error::Numeric(
            "no path re-merged within the search depth".into(),
        ));
    }
    Ok(4.0 * best as f64)
}

/// Jacobian logarithm `ln(e^a + e^b)`.
pub fn max_star(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// BCJR output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcjrOutput {
    /// A-posteriori LLRs of the information bits.
    pub info_llrs: Vec<f64>,
    /// Information-bit extrinsic: posterior minus prior.
    pub info_extrinsic: Vec<f64>,
    /// Coded-bit extrinsic: posterior minus the channel LLR.
    pub coded_extrinsic: Vec<f64>,
}

/// Log-domain BCJR over the terminated trellis with exact max-star.
pub fn bcjr_decode(
    channel_llrs: &[f64],
    code: &ConvCode,
    priors: Option<&[f64]>,
) -> Result<BcjrOutput> {
    let n = code.n_out();
    let k = code.info_len(channel_llrs.len())?;
    let steps = k + code.memory;
    if let Some(p) = priors {
        if p.len() != k {
            return Err(Error::dim(format!(
                "{} priors for {k} information bits",
                p.len()
            )));
        }
    }
    let ns = code.states();
    let ninf = f64::NEG_INFINITY;
    let trellis: Vec<[(usize, u32); 2]> = (0..ns)
        .map(|s| [code.branch(s, 0), code.branch(s, 1)])
        .collect();
    let gamma = |t: usize, u: usize, o: u32| -> f64 {
        if t >= k && u == 1 {
            return ninf;
        }
        let mut g = 0.0;
        if t < k {
            if let Some(p) = priors {
                g += if u == 0 { p[t] / 2.0 } else { -p[t] / 2.0 };
            }
        }
        for i in 0..n {
            let l = channel_llrs[t * n + i];
            g += if (o >> i) & 1 == 0 { l / 2.0 } else { -l / 2.0 };
        }
        g
    };
    let mut alpha = vec![vec![ninf; ns]; steps + 1];
    alpha[0][0] = 0.0;
    for t in 0..steps {
        for s in 0..ns {
            let a = alpha[t][s];
            if a == ninf {
                continue;
            }
            for u in 0..2 {
                let (nx, o) = trellis[s][u];
                alpha[t + 1][nx] = max_star(alpha[t + 1][nx], a + gamma(t, u, o));
            }
        }
    }
    let mut beta = vec![vec![ninf; ns]; steps + 1];
    beta[steps][0] = 0.0;
    for t in (0..steps).rev() {
        for s in 0..ns {
            let mut acc = ninf;
            for u in 0..2 {
                let (nx, o) = trellis[s][u];
                acc = max_star(acc, gamma(t, u, o) + beta[t + 1][nx]);
            }
            beta[t][s] = acc;
        }
    }
    let mut info_llrs = Vec::with_capacity(k);
    let mut coded_post = vec![0.0; steps * n];
    for t in 0..steps {
        let mut bit = [[ninf; 2]; 32];
        let mut inp = [ninf; 2];
        for s in 0..ns {
            if alpha[t][s] == ninf {
                continue;
            }
            for u in 0..2 {
                let (nx, o) = trellis[s][u];
                let m = alpha[t][s] + gamma(t, u, o) + beta[t + 1][nx];
                inp[u] = max_star(inp[u], m);
                for (i, b) in bit.iter_mut().enumerate().take(n) {
                    let c = ((o >> i) & 1) as usize;
                    b[c] = max_star(b[c], m);
                }
            }
        }
        if t < k {
            info_llrs.push((inp[0] - inp[1]).clamp(-1e3, 1e3));
        }
        for i in 0..n {
            coded_post[t * n + i] = (bit[i][0] - bit[i][1]).clamp(-1e3, 1e3);
        }
    }
    let info_extrinsic = info_llrs
        .iter()
        .enumerate()
        .map(|(i, l)| l - priors.map(|p| p[i]).unwrap_or(0.0))
        .collect();
    let coded_extrinsic = coded_post
        .iter()
        .zip(channel_llrs)
        .map(|(p, c)| p - c)
        .collect();
    Ok(BcjrOutput {
        info_llrs,
        info_extrinsic,
        coded_extrinsic,
    })
}

/// Seeded uniform random permutation: `interleave(x)[i] = x[perm[i]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        Self { perm }
    }

    pub fn identity(len: usize) -> Self {
        Self {
            perm: (0..len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn interleave<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn deinterleave<T: Copy + Default>(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); x.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = x[i];
        }
        out
    }
}

/// SISO detector used inside the turbo loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurboDetector {
    /// Symbol-wise MAP by message passing.
    MapSpa { max_iters: usize },
    /// Hybrid MAP / PIC with `l` enumerated interferers.
    Hybrid { l: usize, max_iters: usize },
}

impl Default for TurboDetector {
    fn default() -> Self {
        TurboDetector::MapSpa { max_iters: 10 }
    }
}

/// Turbo-equalization output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurboOutput {
    /// Decisions after the last outer iteration.
    pub info_bits: Vec<u8>,
    /// Decisions after each outer iteration.
    pub per_iteration: Vec<Vec<u8>>,
}

fn prob_to_llr(p0: f64, p1: f64) -> f64 {
    p0.max(1e-300).ln() - p1.max(1e-300).ln()
}

fn llr_to_prior(l: f64) -> Vec<f64> {
    let p0 = 1.0 / (1.0 + (-l).exp());
    vec![p0, 1.0 - p0]
}

/// BPSK turbo equalization on the DD observation `y`: detector posteriors are turned
/// into extrinsic LLRs, de-interleaved, decoded, and the decoder's coded extrinsic is
/// interleaved back as the detector prior, `outer_iters` times.
pub fn turbo_equalize(
    y: &[C64],
    paths: &PathSet<f64>,
    detector: TurboDetector,
    code: &ConvCode,
    interleaver: &Interleaver,
    outer_iters: usize,
    n0: f64,
) -> Result<TurboOutput> {
    let mn = paths.frame().mn();
    if y.len() != mn || interleaver.len() != mn {
        return Err(Error::dim(format!(
            "observation {} / interleaver {} vs MN = {mn}",
            y.len(),
            interleaver.len()
        )));
    }
    code.info_len(mn)?;
    if outer_iters == 0 {
        return Err(Error::param("at least one outer iteration is required"));
    }
    let c = Constellation::Bpsk;
    let mut prior_llr = vec![0.0; mn];
    let mut per_iteration = Vec::with_capacity(outer_iters);
    for it in 0..outer_iters {
        let prior: Option<Vec<Vec<f64>>> =
            (it > 0).then(|| prior_llr.iter().map(|&l| llr_to_prior(l)).collect());
        let det = match detector {
            TurboDetector::MapSpa { max_iters } => {
                map_spa_detect(y, paths, c, n0, prior.as_deref(), max_iters)?
            }
            TurboDetector::Hybrid { l, max_iters } => hybrid_map_pic_detect(
                y,
                paths,
                c,
                n0,
                prior.as_deref(),
                l,
                HybridOptions {
                    max_iters,
                    damping: None,
                },
            )?,
        };
        let ext: Vec<f64> = det
            .posteriors
            .iter()
            .zip(&prior_llr)
            .map(|(p, &pl)| prob_to_llr(p[0], p[1]) - pl)
            .collect();
        let dec = bcjr_decode(&interleaver.deinterleave(&ext), code, None)?;
        per_iteration.push(dec.info_llrs.iter().map(|&l| u8::from(l < 0.0)).collect());
        prior_llr = interleaver
            .interleave(&dec.coded_extrinsic)
            .into_iter()
            .map(|l| l.clamp(-LLR_CLIP, LLR_CLIP))
            .collect();
    }
    Ok(TurboOutput {
        info_bits: per_iteration.last().cloned().unwrap_or_default(),
        per_iteration,
    })
}
