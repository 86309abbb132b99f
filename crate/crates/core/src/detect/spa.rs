//! Symbol-wise MAP detection on the DD factor graph.
//!
//! Each DD observation `y[i] = sum_j H_DD[i, j] x[j] + w[i]` is a factor node
//! connected to the (at most `P`) symbols it sees. Factor-to-variable messages
//! enumerate the joint hypotheses of the other connected symbols
//! ([`map_spa_detect`]) or only of the `L` strongest of them, with the remaining
//! interference replaced by a Gaussian whose mean and variance come from the
//! previous iteration's symbol posteriors ([`hybrid_map_pic_detect`]). Variable-to-factor messages combine the prior
//! with every other incoming factor message. The schedule is flooding.

use crate::channel::PathSet;
use crate::error::{Error, Result};
use crate::modem::Constellation;
use crate::C64;

use super::{softmax_in_place, DetectionResult};

/// Largest joint enumeration accepted per factor message.
pub const MAX_ENUMERATION: usize = 1 << 16;

/// Stop once no variable-to-factor message moves by more than this.
const CONVERGENCE_TOL: f64 = 1e-10;

/// Sparse DD factor graph for an integer-Doppler channel.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    mn: usize,
    /// Per factor: `(variable, coefficient)`, strongest coefficient first.
    rows: Vec<Vec<(usize, C64)>>,
    /// Per variable: `(factor, slot within that factor's row)`.
    cols: Vec<Vec<(usize, usize)>>,
}

impl FactorGraph {
    /// Builds the graph from the closed-form DD input-output relation.
    ///
    /// Entry `(l, k) <- (l', [k - k_p]_N)` with `l' = [l - l_p]_M` has coefficient
    /// `h_p alpha e^{j2 pi k_p l'/(MN)}`, where `alpha = e^{-j2 pi k/N}` when the
    /// delay wraps. Paths landing on the same symbol are merged.
    pub fn new(paths: &PathSet<f64>) -> Result<Self> {
        if !paths.is_integer_doppler() {
            return Err(Error::Unsupported(
                "message-passing detection needs integer Doppler".into(),
            ));
        }
        let frame = paths.frame();
        let (m, n) = (frame.m, frame.n);
        let mn = m * n;
        let mut rows: Vec<Vec<(usize, C64)>> = Vec::with_capacity(mn);
        for k in 0..n {
            for l in 0..m {
                let mut row: Vec<(usize, C64)> = Vec::with_capacity(paths.len());
                for p in paths.paths() {
                    let kp = p.doppler.round() as i64;
                    let (lw, alpha) = if l >= p.delay {
                        (l - p.delay, C64::new(1.0, 0.0))
                    } else {
                        let ph = -std::f64::consts::TAU * k as f64 / n as f64;
                        (l + m - p.delay, C64::from_polar(1.0, ph))
                    };
                    let ks = (k as i64 - kp).rem_euclid(n as i64) as usize;
                    let ph = std::f64::consts::TAU * p.doppler * lw as f64 / mn as f64;
                    let c = p.gain * alpha * C64::from_polar(1.0, ph);
                    let j = lw + ks * m;
                    match row.iter_mut().find(|(v, _)| *v == j) {
                        Some(e) => e.1 += c,
                        None => row.push((j, c)),
                    }
                }
                row.sort_by(|a, b| {
                    b.1.norm_sqr()
                        .total_cmp(&a.1.norm_sqr())
                        .then(a.0.cmp(&b.0))
                });
                rows.push(row);
            }
        }
        // Rows were pushed in (k outer, l inner) order, which is the delay-major index.
        let mut cols = vec![Vec::new(); mn];
        for (f, row) in rows.iter().enumerate() {
            for (s, &(j, _)) in row.iter().enumerate() {
                cols[j].push((f, s));
            }
        }
        Ok(Self { mn, rows, cols })
    }

    pub fn len(&self) -> usize {
        self.mn
    }

    pub fn is_empty(&self) -> bool {
        self.mn == 0
    }

    /// Neighbours of factor `f`, strongest first.
    pub fn row(&self, f: usize) -> &[(usize, C64)] {
        &self.rows[f]
    }

    /// Factors seen by symbol `j`.
    pub fn col(&self, j: usize) -> &[(usize, usize)] {
        &self.cols[j]
    }

    /// `H_DD x` through the graph.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, c)| c * x[j]).sum())
            .collect()
    }

    /// Splits the interferers of `(f, slot)` into the `l` strongest, which are
    /// enumerated, and the rest, which are treated as Gaussian.
    pub fn partition(&self, f: usize, slot: usize, l: usize) -> (Vec<usize>, Vec<usize>) {
        let others: Vec<usize> = (0..self.rows[f].len()).filter(|&s| s != slot).collect();
        let cut = l.min(others.len());
        (others[..cut].to_vec(), others[cut..].to_vec())
    }

    /// Signal-to-interference-plus-noise ratio of `(f, slot)` when every
    /// Gaussian-treated interferer has mean 0 and variance `es`.
    pub fn partition_sinr(&self, f: usize, slot: usize, l: usize, es: f64, n0: f64) -> f64 {
        let (_, gauss) = self.partition(f, slot, l);
        let row = &self.rows[f];
        let sigma2: f64 = gauss.iter().map(|&s| row[s].1.norm_sqr() * es).sum();
        row[slot].1.norm_sqr() * es / (n0 + sigma2)
    }
}

/// `|h_i|^2 E_s / (N_0 + sum_{j > L} |h_j|^2 E_s)` for path `target` of a gain list,
/// where the sum runs over the interferers ranked below the `l` strongest.
pub fn effective_sinr(powers: &[f64], target: usize, l: usize, es: f64, n0: f64) -> f64 {
    let mut others: Vec<f64> = powers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, &p)| p)
        .collect();
    others.sort_by(|a, b| b.total_cmp(a));
    let tail: f64 = others.iter().skip(l).sum();
    powers[target] * es / (n0 + tail * es)
}

/// Options for [`hybrid_map_pic_detect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridOptions {
    pub max_iters: usize,
    /// Damping `p <- delta p_new + (1 - delta) p_old` of the messages and
    /// posteriors; only valid with `L = 0`.
    pub damping: Option<f64>,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            damping: None,
        }
    }
}

/// Symbol-wise MAP detection by sum-product message passing.
///
/// `y` is the received DD frame in delay-major order and `prior`, when given,
/// holds one probability row per symbol.
pub fn map_spa_detect(
    y: &[C64],
    paths: &PathSet<f64>,
    constellation: Constellation,
    n0: f64,
    prior: Option<&[Vec<f64>]>,
    max_iters: usize,
) -> Result<DetectionResult> {
    let p = paths.len();
    guard(constellation.order(), p - 1)?;
    run(
        y,
        paths,
        constellation,
        n0,
        prior,
        p - 1,
        HybridOptions {
            max_iters,
            damping: None,
        },
    )
}

/// Hybrid MAP / parallel interference cancellation with `l` enumerated interferers.
pub fn hybrid_map_pic_detect(
    y: &[C64],
    paths: &PathSet<f64>,
    constellation: Constellation,
    n0: f64,
    prior: Option<&[Vec<f64>]>,
    l: usize,
    opts: HybridOptions,
) -> Result<DetectionResult> {
    if l >= paths.len() {
        return Err(Error::param(format!(
            "L = {l} outside 0..={}",
            paths.len() - 1
        )));
    }
    if let Some(d) = opts.damping {
        if l != 0 {
            return Err(Error::param(
                "damping applies to the L = 0 configuration only",
            ));
        }
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::param(format!("damping factor {d} outside (0, 1]")));
        }
    }
    guard(constellation.order(), l)?;
    run(y, paths, constellation, n0, prior, l, opts)
}

fn guard(order: usize, l: usize) -> Result<()> {
    let work = (order as f64).powi(l as i32);
    if work > MAX_ENUMERATION as f64 {
        return Err(Error::Complexity(format!(
            "{order}^{l} joint hypotheses per message exceed {MAX_ENUMERATION}"
        )));
    }
    Ok(())
}

fn run(
    y: &[C64],
    paths: &PathSet<f64>,
    constellation: Constellation,
    n0: f64,
    prior: Option<&[Vec<f64>]>,
    l: usize,
    opts: HybridOptions,
) -> Result<DetectionResult> {
    let graph = FactorGraph::new(paths)?;
    let mn = graph.len();
    if y.len() != mn {
        return Err(Error::dim(format!(
            "observation has {} entries, frame {mn}",
            y.len()
        )));
    }
    if !(n0 >= 0.0) {
        return Err(Error::param(format!(
            "noise variance {n0} must be non-negative"
        )));
    }
    let pts = constellation.points();
    let q_order = pts.len();
    let log_prior: Vec<Vec<f64>> = match prior {
        Some(rows) => {
            if rows.len() != mn || rows.iter().any(|r| r.len() != q_order) {
                return Err(Error::dim(
                    "prior must hold one row per symbol over the constellation",
                ));
            }
            rows.iter()
                .map(|r| r.iter().map(|&p| p.max(0.0).ln()).collect())
                .collect()
        }
        None => vec![vec![-(q_order as f64).ln(); q_order]; mn],
    };
    let init: Vec<Vec<f64>> = log_prior
        .iter()
        .map(|r| {
            let mut w = r.clone();
            softmax_in_place(&mut w);
            w
        })
        .collect();

    // q[f][s]: variable-to-factor probabilities; mu[f][s]: factor-to-variable log messages.
    let mut q: Vec<Vec<Vec<f64>>> = graph
        .rows
        .iter()
        .map(|row| row.iter().map(|&(j, _)| init[j].clone()).collect())
        .collect();
    let mut mu: Vec<Vec<Vec<f64>>> = graph
        .rows
        .iter()
        .map(|row| vec![vec![0.0; q_order]; row.len()])
        .collect();

    // Moments of the previous-iteration posteriors feed the Gaussian-treated set.
    let moments_of = |rows: &[Vec<f64>]| -> Vec<(C64, f64)> {
        rows.iter()
            .map(|p| {
                let mean: C64 = p.iter().zip(&pts).map(|(w, a)| a * *w).sum();
                let second: f64 = p.iter().zip(&pts).map(|(w, a)| w * a.norm_sqr()).sum();
                (mean, (second - mean.norm_sqr()).max(0.0))
            })
            .collect()
    };
    let mut post = init.clone();
    let mut iterations = 0;
    let max_iters = opts.max_iters.max(1);
    for _ in 0..max_iters {
        iterations += 1;
        let moments = moments_of(&post);
        for f in 0..mn {
            factor_update(&graph, f, y[f], n0, &pts, &q[f], &moments, l, &mut mu[f]);
        }
        let mut delta: f64 = 0.0;
        for j in 0..mn {
            let col = &graph.cols[j];
            let mut total = log_prior[j].clone();
            for &(f, s) in col {
                for (t, v) in total.iter_mut().zip(&mu[f][s]) {
                    *t += v;
                }
            }
            for &(f, s) in col {
                let mut w: Vec<f64> = total.iter().zip(&mu[f][s]).map(|(t, v)| t - v).collect();
                softmax_in_place(&mut w);
                if let Some(d) = opts.damping {
                    for (wi, old) in w.iter_mut().zip(&q[f][s]) {
                        *wi = d * *wi + (1.0 - d) * old;
                    }
                }
                for (wi, old) in w.iter().zip(&q[f][s]) {
                    delta = delta.max((wi - old).abs());
                }
                q[f][s] = w;
            }
            softmax_in_place(&mut total);
            if let Some(d) = opts.damping {
                for (t, old) in total.iter_mut().zip(&post[j]) {
                    *t = d * *t + (1.0 - d) * old;
                }
            }
            for (t, old) in total.iter().zip(&post[j]) {
                delta = delta.max((t - old).abs());
            }
            post[j] = total;
        }
        if delta < CONVERGENCE_TOL {
            break;
        }
    }

    let posteriors: Vec<Vec<f64>> = (0..mn)
        .map(|j| {
            let mut total = log_prior[j].clone();
            for &(f, s) in &graph.cols[j] {
                for (t, v) in total.iter_mut().zip(&mu[f][s]) {
                    *t += v;
                }
            }
            softmax_in_place(&mut total);
            total
        })
        .collect();
    Ok(DetectionResult::from_posteriors(posteriors, iterations))
}

/// Recomputes every outgoing message of factor `f`.
#[allow(clippy::too_many_arguments)]
fn factor_update(
    graph: &FactorGraph,
    f: usize,
    y: C64,
    n0: f64,
    pts: &[C64],
    q: &[Vec<f64>],
    moments: &[(C64, f64)],
    l: usize,
    out: &mut [Vec<f64>],
) {
    let row = &graph.rows[f];
    let order = pts.len();
    let log_q: Vec<Vec<f64>> = q
        .iter()
        .map(|qs| {
            qs.iter()
                .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
                .collect()
        })
        .collect();
    let mut combo = Vec::new();
    let mut terms = Vec::new();
    for (slot, msg) in out.iter_mut().enumerate() {
        let (enumerated, gauss) = graph.partition(f, slot, l);
        let mut mu_g = C64::new(0.0, 0.0);
        let mut var_g = 0.0;
        for &s in &gauss {
            let (j, c) = row[s];
            mu_g += c * moments[j].0;
            var_g += c.norm_sqr() * moments[j].1;
        }
        let denom = (n0 + var_g).max(1e-300);
        let resid0 = y - mu_g;
        let cs = row[slot].1;
        combo.clear();
        combo.resize(enumerated.len(), 0usize);
        for (a_idx, m) in msg.iter_mut().enumerate() {
            let base = resid0 - cs * pts[a_idx];
            terms.clear();
            combo.iter_mut().for_each(|c| *c = 0);
            loop {
                let mut r = base;
                let mut lw = 0.0;
                for (e, &s) in enumerated.iter().enumerate() {
                    r -= row[s].1 * pts[combo[e]];
                    lw += log_q[s][combo[e]];
                }
                terms.push(lw - r.norm_sqr() / denom);
                // Odometer over the enumerated hypotheses.
                let mut pos = 0;
                while pos < combo.len() {
                    combo[pos] += 1;
                    if combo[pos] < order {
                        break;
                    }
                    combo[pos] = 0;
                    pos += 1;
                }
                if pos == combo.len() {
                    break;
                }
            }
            *m = log_sum_exp(&terms);
        }
        let mx = msg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if mx.is_finite() {
            msg.iter_mut().for_each(|v| *v -= mx);
        } else {
            msg.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{dd_io_integer, Path};
    use crate::modem::{snr_db_to_n0, symbols_to_grid};
    use crate::transforms::FrameParams;
    use crate::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_path(m: usize, n: usize) -> PathSet<f64> {
        PathSet::new(
            FrameParams::grid(m, n),
            vec![
                Path::new(C64::new(0.8, 0.3), 0, 0.0),
                Path::new(C64::new(-0.2, 0.4), 1, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn graph_matches_closed_form() {
        let paths = PathSet::new(
            FrameParams::grid(4, 4),
            vec![
                Path::new(C64::new(0.5, 0.1), 0, 1.0),
                Path::new(C64::new(0.2, -0.6), 2, -1.0),
                Path::new(C64::new(-0.3, 0.3), 2, -1.0),
            ],
        )
        .unwrap();
        let g = FactorGraph::new(&paths).unwrap();
        let x: Vec<C64> = (0..16)
            .map(|i| C64::new(i as f64, 1.0 - i as f64 * 0.3))
            .collect();
        let grid = Grid::from_vec(4, 4, x.clone()).unwrap();
        let want = dd_io_integer(&grid, &paths).unwrap();
        for (a, b) in g.apply(&x).iter().zip(want.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
        // The duplicated path was merged.
        assert!(g.row(0).len() == 2);
    }

    #[test]
    fn single_path_is_exact_likelihood_times_prior() {
        let paths = PathSet::new(
            FrameParams::grid(2, 2),
            vec![Path::new(C64::new(0.6, -0.8), 1, 1.0)],
        )
        .unwrap();
        let y: Vec<C64> = (0..4)
            .map(|i| C64::new(0.3 * i as f64 - 0.4, 0.1))
            .collect();
        let prior: Vec<Vec<f64>> = (0..4)
            .map(|i| vec![0.3 + 0.1 * i as f64, 0.7 - 0.1 * i as f64])
            .collect();
        let n0 = 0.5;
        let res = map_spa_detect(&y, &paths, Constellation::Bpsk, n0, Some(&prior), 3).unwrap();
        let g = FactorGraph::new(&paths).unwrap();
        for j in 0..4 {
            let (f, s) = g.col(j)[0];
            let c = g.row(f)[s].1;
            let w: Vec<f64> = (0..2)
                .map(|a| {
                    prior[j][a] * (-(y[f] - c * Constellation::Bpsk.point(a)).norm_sqr() / n0).exp()
                })
                .collect();
            let z = w[0] + w[1];
            for a in 0..2 {
                assert!((res.posteriors[j][a] - w[a] / z).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hybrid_full_enumeration_equals_map() {
        let paths = two_path(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = Constellation::Qpsk.random_indices(8, &mut rng);
        let x = symbols_to_grid::<f64>(Constellation::Qpsk, &idx, paths.frame()).unwrap();
        let y = dd_io_integer(&x, &paths).unwrap();
        let a = map_spa_detect(y.as_slice(), &paths, Constellation::Qpsk, 0.3, None, 6).unwrap();
        let b = hybrid_map_pic_detect(
            y.as_slice(),
            &paths,
            Constellation::Qpsk,
            0.3,
            None,
            1,
            HybridOptions {
                max_iters: 6,
                damping: None,
            },
        )
        .unwrap();
        assert_eq!(a.posteriors, b.posteriors);
    }

    #[test]
    fn noise_free_recovery() {
        let paths = two_path(8, 4);
        let n0 = snr_db_to_n0(40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let idx = Constellation::Bpsk.random_indices(32, &mut rng);
            let x = symbols_to_grid::<f64>(Constellation::Bpsk, &idx, paths.frame()).unwrap();
            let y = dd_io_integer(&x, &paths).unwrap();
            let r =
                map_spa_detect(y.as_slice(), &paths, Constellation::Bpsk, n0, None, 10).unwrap();
            assert_eq!(r.hard, idx);
        }
    }

    #[test]
    fn errors_and_guards() {
        let paths = two_path(4, 2);
        let y = vec![C64::new(0.0, 0.0); 8];
        assert!(matches!(
            hybrid_map_pic_detect(
                &y,
                &paths,
                Constellation::Bpsk,
                0.1,
                None,
                2,
                HybridOptions::default()
            ),
            Err(Error::InvalidParameter(_))
        ));
        let damped = HybridOptions {
            max_iters: 2,
            damping: Some(0.7),
        };
        assert!(
            hybrid_map_pic_detect(&y, &paths, Constellation::Bpsk, 0.1, None, 1, damped).is_err()
        );
        assert!(
            hybrid_map_pic_detect(&y, &paths, Constellation::Bpsk, 0.1, None, 0, damped).is_ok()
        );
        let frac = PathSet::new(
            FrameParams::grid(4, 2),
            vec![Path::new(C64::new(1.0, 0.0), 0, 0.5)],
        )
        .unwrap();
        assert!(matches!(
            map_spa_detect(&y, &frac, Constellation::Bpsk, 0.1, None, 1),
            Err(Error::Unsupported(_))
        ));
        let many: Vec<Path<f64>> = (0..10)
            .map(|d| Path::new(C64::new(0.3, 0.0), d, 0.0))
            .collect();
        let big = PathSet::new(FrameParams::grid(16, 2), many).unwrap();
        let y = vec![C64::new(0.0, 0.0); 32];
        assert!(matches!(
            map_spa_detect(&y, &big, Constellation::Qam16, 0.1, None, 1),
            Err(Error::Complexity(_))
        ));
    }

    #[test]
    fn worst_case_sinr_matches_formula() {
        let paths = PathSet::new(
            FrameParams::grid(8, 4),
            vec![
                Path::new(C64::new(0.9, 0.0), 0, 0.0),
                Path::new(C64::new(0.0, 0.5), 1, 1.0),
                Path::new(C64::new(0.3, 0.1), 2, -1.0),
                Path::new(C64::new(0.1, -0.2), 3, 2.0),
            ],
        )
        .unwrap();
        let powers: Vec<f64> = paths.paths().iter().map(|p| p.gain.norm_sqr()).collect();
        let g = FactorGraph::new(&paths).unwrap();
        let (es, n0) = (1.0, 0.05);
        for l in 0..4 {
            for f in [0, 13, 31] {
                for slot in 0..g.row(f).len() {
                    let c2 = g.row(f)[slot].1.norm_sqr();
                    let target = powers.iter().position(|p| (p - c2).abs() < 1e-12).unwrap();
                    let want = effective_sinr(&powers, target, l, es, n0);
                    let got = g.partition_sinr(f, slot, l, es, n0);
                    assert!((want - got).abs() < 1e-12 * want.max(1.0));
                }
            }
        }
    }
}
