//! Seeded Monte Carlo execution.
//!
//! Trial `t` of sweep point `s` draws from ChaCha8 seeded with
//! `SHA-256(master_le || s_le || t_le)` (all `u64`, little-endian). Trials run in
//! fixed-size chunks on a worker pool and are folded back in trial order, so the
//! output depends on the configuration alone and never on the number of workers.
//! With a target event count, the stopping rule is checked after every chunk.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ChannelConfig, DetectorSpec, ExperimentConfig, ExperimentKind};
use super::emit::{ResultRow, ResultTable};
use super::stats::{wilson, Moments};
use crate::analysis::{
    codeword_difference_matrix, conditional_coding_gain, random_bpsk_error, PathEnsemble,
};
use crate::channel::{generate_channel, PathSet};
use crate::coding::{conv_encode, turbo_equalize, ConvCode, Interleaver, TurboDetector};
use crate::detect::{
    cross_domain_detect, cross_domain_trace, hybrid_map_pic_detect, map_spa_detect, mmse_baseline,
    mrc_baseline, state_evolution, CrossDomainOptions, DetectionResult, HybridOptions, SeInput,
    SymbolModel,
};
use crate::error::{Error, Result};
use crate::isac::{sensing_trial, user_channel};
use crate::modem::{snr_db_to_n0, symbols_to_grid, transmit, Constellation};
use crate::transforms::FrameParams;
use crate::C64;

/// Environment variable consulted when `jobs` is 0.
pub const JOBS_ENV: &str = "OTFS_LAB_JOBS";

/// The 32-byte ChaCha8 seed of one trial.
pub fn trial_seed(master: u64, point: u64, trial: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(point.to_le_bytes());
    h.update(trial.to_le_bytes());
    h.finalize().into()
}

pub fn trial_rng(master: u64, point: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(trial_seed(master, point, trial))
}

/// Worker count: explicit value, else `OTFS_LAB_JOBS`, else all cores.
pub fn resolve_jobs(jobs: usize) -> Result<usize> {
    if jobs > 0 {
        return Ok(jobs);
    }
    match std::env::var(JOBS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(Error::config(
                JOBS_ENV,
                format!("expected a positive integer, got `{v}`"),
            )),
            Ok(k) => Ok(k),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// One observation of one metric in one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sample {
    /// `events` errors out of `units` opportunities.
    Count {
        events: u64,
        units: u64,
    },
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MetricKind {
    Rate,
    Mean,
    /// Mean of a linear quantity, reported in dB.
    MeanDb,
}

struct Metric {
    name: String,
    kind: MetricKind,
    /// Counts toward the event target.
    stops: bool,
}

impl Metric {
    fn rate(name: impl Into<String>, stops: bool) -> Self {
        Self {
            name: name.into(),
            kind: MetricKind::Rate,
            stops,
        }
    }

    fn mean(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: MetricKind::Mean,
            stops: false,
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Acc {
    events: u64,
    units: u64,
    moments: Moments,
}

type TrialFn<'a> = Box<dyn Fn(&mut ChaCha8Rng) -> Result<Vec<Sample>> + Sync + 'a>;

/// Runs the experiment on a pool of `config.jobs` workers.
pub fn run(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let jobs = resolve_jobs(config.jobs)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Unsupported(e.to_string()))?;
    let points: Vec<f64> = match config.kind {
        ExperimentKind::CodingGain => config.analysis.p_values.iter().map(|&p| p as f64).collect(),
        _ => config.snr_db.clone(),
    };
    let mut rows = Vec::new();
    for (si, &x) in points.iter().enumerate() {
        let start = Instant::now();
        let (metrics, trial) = plan(config, x)?;
        let (trials, acc) = pool.install(|| execute(config, si as u64, &metrics, &trial))?;
        let seconds = if config.timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        for (m, a) in metrics.iter().zip(acc) {
            let (value, ci95, events) = match m.kind {
                MetricKind::Rate => {
                    let v = if a.units == 0 {
                        0.0
                    } else {
                        a.events as f64 / a.units as f64
                    };
                    (v, wilson(a.events, a.units).1, a.events)
                }
                MetricKind::Mean => (a.moments.mean(), a.moments.ci95(), 0),
                MetricKind::MeanDb => {
                    let mu = a.moments.mean();
                    if !(mu > 0.0) {
                        return Err(Error::Numeric(format!("{} has non-positive mean", m.name)));
                    }
                    (
                        10.0 * mu.log10(),
                        10.0 / std::f64::consts::LN_10 * a.moments.ci95() / mu,
                        0,
                    )
                }
            };
            rows.push(ResultRow {
                sweep: x,
                metric: m.name.clone(),
                value,
                ci95,
                trials,
                events,
                seconds,
            });
        }
    }
    Ok(ResultTable {
        config: config.clone(),
        rows,
    })
}

fn execute(
    config: &ExperimentConfig,
    point: u64,
    metrics: &[Metric],
    trial: &TrialFn<'_>,
) -> Result<(u64, Vec<Acc>)> {
    let mut acc = vec![Acc::default(); metrics.len()];
    let mut done = 0u64;
    let total = config.stop.trials;
    while done < total {
        let end = (done + config.stop.chunk).min(total);
        let chunk: Vec<Vec<Sample>> = (done..end)
            .into_par_iter()
            .map(|t| trial(&mut trial_rng(config.seed, point, t)))
            .collect::<Result<_>>()?;
        for samples in chunk {
            if samples.len() != metrics.len() {
                return Err(Error::dim("trial returned the wrong number of samples"));
            }
            for (a, s) in acc.iter_mut().zip(samples) {
                match s {
                    Sample::Count { events, units } => {
                        a.events += events;
                        a.units += units;
                    }
                    Sample::Value(v) => a.moments.push(v),
                }
            }
        }
        done = end;
        if let Some(target) = config.stop.target_events {
            let mut stopping = metrics.iter().zip(&acc).filter(|(m, _)| m.stops).peekable();
            if stopping.peek().is_some() && stopping.all(|(_, a)| a.events >= target) {
                break;
            }
        }
    }
    Ok((done, acc))
}

fn draw_channel(
    cfg: &ChannelConfig,
    fixed: &Option<PathSet<f64>>,
    frame: FrameParams,
    rng: &mut ChaCha8Rng,
) -> Result<PathSet<f64>> {
    match (cfg, fixed) {
        (_, Some(p)) => Ok(p.clone()),
        (ChannelConfig::Random(spec), None) => generate_channel(frame, spec, rng),
        _ => Err(Error::param(
            "channel has neither a fixed path set nor a random spec",
        )),
    }
}

/// Runs the configured detector on one received frame.
pub fn detect_frame(
    detector: DetectorSpec,
    y: &crate::DomainVector64,
    r: &crate::DomainVector64,
    paths: &PathSet<f64>,
    c: Constellation,
    n0: f64,
    truth: Option<&[C64]>,
) -> Result<DetectionResult> {
    match detector {
        DetectorSpec::Mmse => mmse_baseline(y, &paths.td_operator(), c, n0),
        DetectorSpec::Mrc => mrc_baseline(y, &paths.td_operator(), c, n0),
        DetectorSpec::MapSpa { max_iters } => {
            map_spa_detect(y.as_slice(), paths, c, n0, None, max_iters)
        }
        DetectorSpec::Hybrid {
            l,
            max_iters,
            damping,
        } => hybrid_map_pic_detect(
            y.as_slice(),
            paths,
            c,
            n0,
            None,
            l,
            HybridOptions { max_iters, damping },
        ),
        DetectorSpec::CrossDomain { iterations } => cross_domain_detect(
            r,
            &paths.td_operator(),
            c,
            n0,
            CrossDomainOptions { iterations },
            truth,
        ),
    }
}

fn turbo_detector(d: DetectorSpec) -> Result<TurboDetector> {
    match d {
        DetectorSpec::MapSpa { max_iters } => Ok(TurboDetector::MapSpa { max_iters }),
        DetectorSpec::Hybrid {
            l,
            max_iters,
            damping: None,
        } => Ok(TurboDetector::Hybrid { l, max_iters }),
        _ => Err(Error::config(
            "detector.kind",
            "turbo equalization needs map_spa or undamped hybrid",
        )),
    }
}

/// Draws symbols, transmits and detects one uncoded frame.
fn uncoded_frame(
    config: &ExperimentConfig,
    paths: &PathSet<f64>,
    n0: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<C64>, DetectionResult)> {
    let frame = *paths.frame();
    let c = config.constellation;
    let idx = c.random_indices(frame.mn(), rng);
    let x = symbols_to_grid::<f64>(c, &idx, &frame)?;
    let (y, r) = transmit(&x, paths, n0, rng)?;
    let det = detect_frame(config.detector, &y, &r, paths, c, n0, Some(x.as_slice()))?;
    let xs = x.into_vec();
    Ok((idx, xs, det))
}

fn error_samples(det: &DetectionResult, idx: &[usize], c: Constellation) -> [Sample; 3] {
    let bits = det.bit_errors(idx) as u64;
    let syms = det.symbol_errors(idx) as u64;
    let n = idx.len() as u64;
    [
        Sample::Count {
            events: bits,
            units: n * c.bits_per_symbol() as u64,
        },
        Sample::Count {
            events: syms,
            units: n,
        },
        Sample::Count {
            events: u64::from(syms > 0),
            units: 1,
        },
    ]
}

fn error_metrics() -> Vec<Metric> {
    vec![
        Metric::rate("ber", true),
        Metric::rate("ser", false),
        Metric::rate("fer", false),
    ]
}

/// Metric list and trial closure for one sweep point.
fn plan<'a>(config: &'a ExperimentConfig, x: f64) -> Result<(Vec<Metric>, TrialFn<'a>)> {
    let frame = config.frame.params();
    let fixed = config.channel.fixed(frame)?;
    let n0 = snr_db_to_n0(x);
    let c = config.constellation;
    match config.kind {
        ExperimentKind::Ber => Ok((
            error_metrics(),
            Box::new(move |rng| {
                let paths = draw_channel(&config.channel, &fixed, frame, rng)?;
                let (idx, _, det) = uncoded_frame(config, &paths, n0, rng)?;
                Ok(error_samples(&det, &idx, c).to_vec())
            }),
        )),
        ExperimentKind::IsacFer => {
            let isac = config.isac.as_ref().expect("validated");
            let paths = user_channel(isac.scenario()?, isac.user, isac.allocation, isac.precoded)?;
            Ok((
                error_metrics(),
                Box::new(move |rng| {
                    let (idx, _, det) = uncoded_frame(config, &paths, n0, rng)?;
                    Ok(error_samples(&det, &idx, c).to_vec())
                }),
            ))
        }
        ExperimentKind::IsacSensing => {
            let isac = config.isac.as_ref().expect("validated");
            let scenario = isac.scenario()?;
            let rule = isac.allocation;
            Ok((
                vec![Metric::rate("miss", true)],
                Box::new(move |rng| {
                    let o = sensing_trial(scenario, rule, x, rng)?;
                    Ok(vec![Sample::Count {
                        events: u64::from(o.miss),
                        units: 1,
                    }])
                }),
            ))
        }
        ExperimentKind::MseTrace => {
            let iterations = match config.detector {
                DetectorSpec::CrossDomain { iterations } => iterations,
                _ => unreachable!("validated"),
            };
            let se = config.se;
            let mut metrics = error_metrics();
            metrics.extend((0..=iterations).map(|i| Metric::mean(format!("mse_iter{i}"))));
            metrics.extend((0..=iterations).map(|i| Metric::mean(format!("se_iter{i}"))));
            Ok((
                metrics,
                Box::new(move |rng| {
                    let paths = draw_channel(&config.channel, &fixed, frame, rng)?;
                    let idx = c.random_indices(frame.mn(), rng);
                    let xg = symbols_to_grid::<f64>(c, &idx, &frame)?;
                    let (_, r) = transmit(&xg, &paths, n0, rng)?;
                    let h = paths.td_operator();
                    let (det, _) = cross_domain_trace(
                        &r,
                        &h,
                        c,
                        n0,
                        CrossDomainOptions { iterations },
                        Some(xg.as_slice()),
                    )?;
                    let pred = state_evolution(
                        &SeInput::Channel(h),
                        SymbolModel::Constellation(c),
                        n0,
                        iterations,
                        se.mc_samples,
                    )?;
                    let mut out = error_samples(&det, &idx, c).to_vec();
                    out.extend(det.per_iteration_mse.iter().map(|&v| Sample::Value(v)));
                    out.extend(pred.v_td.iter().map(|&v| Sample::Value(v)));
                    Ok(out)
                }),
            ))
        }
        ExperimentKind::StateEvolution => {
            let iters = config.se.iterations;
            let se = config.se;
            let mut metrics: Vec<Metric> = (0..=iters)
                .map(|i| Metric::mean(format!("se_iter{i}")))
                .collect();
            metrics.extend((0..iters).map(|i| Metric::mean(format!("eta_dd_iter{i}"))));
            Ok((
                metrics,
                Box::new(move |rng| {
                    let paths = draw_channel(&config.channel, &fixed, frame, rng)?;
                    let t = state_evolution(
                        &SeInput::Channel(paths.td_operator()),
                        SymbolModel::Constellation(c),
                        n0,
                        iters,
                        se.mc_samples,
                    )?;
                    Ok(t.v_td
                        .iter()
                        .chain(&t.eta_dd)
                        .map(|&v| Sample::Value(v))
                        .collect())
                }),
            ))
        }
        ExperimentKind::CodingGain => {
            let a = &config.analysis;
            let ensemble = PathEnsemble::Random {
                p: x as usize,
                l_max: a.l_max,
                k_max: a.k_max,
                fractional: a.fractional,
            };
            let weight = a.weight;
            Ok((
                vec![
                    Metric {
                        name: "coding_gain_db".into(),
                        kind: MetricKind::MeanDb,
                        stops: false,
                    },
                    Metric::mean("rank"),
                ],
                Box::new(move |rng| {
                    let e = random_bpsk_error(frame.mn(), weight, rng);
                    let (d, k) = ensemble.draw(rng);
                    let cdm = codeword_difference_matrix(&e, &d, &k, &frame, None)?;
                    Ok(vec![
                        Sample::Value(conditional_coding_gain(&cdm)),
                        Sample::Value(cdm.rank as f64),
                    ])
                }),
            ))
        }
        ExperimentKind::FerCoded => plan_coded(config, frame, fixed, n0),
    }
}

fn plan_coded<'a>(
    config: &'a ExperimentConfig,
    frame: FrameParams,
    fixed: Option<PathSet<f64>>,
    n0: f64,
) -> Result<(Vec<Metric>, TrialFn<'a>)> {
    let detector = turbo_detector(config.detector)?;
    let codes: Vec<(String, ConvCode)> = config
        .code
        .names
        .iter()
        .map(|n| ConvCode::by_name(n).map(|c| (n.to_lowercase(), c)))
        .collect::<Result<_>>()?;
    let mn = frame.mn();
    let mut metrics = Vec::new();
    for (name, code) in &codes {
        code.info_len(mn)?;
        metrics.push(Metric::rate(format!("fer_{name}"), true));
        metrics.push(Metric::rate(format!("ber_{name}"), false));
    }
    if config.code.uncoded {
        metrics.push(Metric::rate("fer_uncoded", true));
        metrics.push(Metric::rate("ber_uncoded", false));
    }
    let outer = config.code.outer_iters;
    let bpsk = Constellation::Bpsk;
    let trial = move |rng: &mut ChaCha8Rng| -> Result<Vec<Sample>> {
        let paths = draw_channel(&config.channel, &fixed, frame, rng)?;
        let interleaver = Interleaver::random(mn, rng);
        // Every code sees the same channel, interleaver and noise realisation.
        let noise_seed: [u8; 32] = rng.random();
        let mut out = Vec::with_capacity(2 * codes.len() + 2);
        let frame_errors = |errs: usize, len: usize| {
            [
                Sample::Count {
                    events: u64::from(errs > 0),
                    units: 1,
                },
                Sample::Count {
                    events: errs as u64,
                    units: len as u64,
                },
            ]
        };
        for (_, code) in &codes {
            let k = code.info_len(mn)?;
            let info: Vec<u8> = (0..k).map(|_| rng.random_range(0..2u8)).collect();
            let coded = interleaver.interleave(&conv_encode(&info, code));
            let idx: Vec<usize> = coded.iter().map(|&b| b as usize).collect();
            let xg = symbols_to_grid::<f64>(bpsk, &idx, &frame)?;
            let (y, _) = transmit(&xg, &paths, n0, &mut ChaCha8Rng::from_seed(noise_seed))?;
            let dec = turbo_equalize(
                y.as_slice(),
                &paths,
                detector,
                code,
                &interleaver,
                outer,
                n0,
            )?;
            let errs = dec
                .info_bits
                .iter()
                .zip(&info)
                .filter(|(a, b)| a != b)
                .count();
            out.extend(frame_errors(errs, k));
        }
        if config.code.uncoded {
            let idx = bpsk.random_indices(mn, rng);
            let xg = symbols_to_grid::<f64>(bpsk, &idx, &frame)?;
            let (y, r) = transmit(&xg, &paths, n0, &mut ChaCha8Rng::from_seed(noise_seed))?;
            let det = detect_frame(config.detector, &y, &r, &paths, bpsk, n0, None)?;
            out.extend(frame_errors(det.bit_errors(&idx), mn));
        }
        Ok(out)
    };
    Ok((metrics, Box::new(trial)))
}
