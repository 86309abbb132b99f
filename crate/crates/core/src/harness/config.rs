//! Experiment configuration (TOML).
//!
//! Every field has a default, and the resolved configuration is echoed into each
//! output file. `jobs` is an execution setting only: it is never serialised, so
//! outputs do not depend on it.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSpec, Path, PathSet, PowerDelayProfile};
use crate::error::{Error, Result};
use crate::isac::{Allocation, Scenario};
use crate::modem::Constellation;
use crate::transforms::FrameParams;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Ber,
    FerCoded,
    MseTrace,
    StateEvolution,
    CodingGain,
    IsacSensing,
    IsacFer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub m: usize,
    pub n: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { m: 16, n: 8 }
    }
}

impl FrameConfig {
    pub fn params(&self) -> FrameParams {
        FrameParams::grid(self.m, self.n)
    }
}

/// Channel model per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelConfig {
    /// Single unit path: plain AWGN.
    Awgn,
    /// Fresh random path set per trial.
    Random(ChannelSpec),
    /// The same path set every trial; gains are `[re, im]`.
    Fixed {
        gains: Vec<[f64; 2]>,
        delays: Vec<usize>,
        dopplers: Vec<f64>,
    },
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig::Awgn
    }
}

impl ChannelConfig {
    /// The fixed path set, if this is not a random channel.
    pub fn fixed(&self, frame: FrameParams) -> Result<Option<PathSet<f64>>> {
        match self {
            ChannelConfig::Awgn => Ok(Some(PathSet::new(
                frame,
                vec![Path::new(C64::new(1.0, 0.0), 0, 0.0)],
            )?)),
            ChannelConfig::Random(_) => Ok(None),
            ChannelConfig::Fixed {
                gains,
                delays,
                dopplers,
            } => {
                if gains.len() != delays.len() || gains.len() != dopplers.len() {
                    return Err(Error::config(
                        "channel",
                        "gains, delays and dopplers differ in length",
                    ));
                }
                let paths = gains
                    .iter()
                    .zip(delays)
                    .zip(dopplers)
                    .map(|((g, &l), &k)| Path::new(C64::new(g[0], g[1]), l, k))
                    .collect();
                Ok(Some(PathSet::new(frame, paths)?))
            }
        }
    }
}

/// Detector and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorSpec {
    Mmse,
    Mrc,
    MapSpa {
        #[serde(default = "default_spa_iters")]
        max_iters: usize,
    },
    Hybrid {
        l: usize,
        #[serde(default = "default_spa_iters")]
        max_iters: usize,
        #[serde(default)]
        damping: Option<f64>,
    },
    CrossDomain {
        #[serde(default = "default_cd_iters")]
        iterations: usize,
    },
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec::Mmse
    }
}

fn default_spa_iters() -> usize {
    10
}

fn default_cd_iters() -> usize {
    5
}

/// Trial budget per sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopRule {
    /// Maximum number of trials.
    pub trials: u64,
    /// Stop once every counted metric has at least this many error events.
    pub target_events: Option<u64>,
    /// Trials per scheduling chunk; the stopping rule is checked between chunks.
    pub chunk: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            trials: 1000,
            target_events: None,
            chunk: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeConfig {
    /// Codes `"a"`..`"d"`, each reported as its own metric on shared channels and noise.
    pub names: Vec<String>,
    /// Also report an uncoded BPSK frame on the same channel.
    pub uncoded: bool,
    pub outer_iters: usize,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self {
            names: vec!["d".into()],
            uncoded: false,
            outer_iters: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeConfig {
    pub iterations: usize,
    pub mc_samples: usize,
}

impl Default for SeConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            mc_samples: crate::detect::se::DEFAULT_MC_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Path counts swept by `coding_gain`.
    pub p_values: Vec<usize>,
    /// Non-zero entries of the BPSK error sequence, so `d_E^2 = 4 weight`.
    pub weight: usize,
    pub l_max: usize,
    pub k_max: f64,
    pub fractional: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            p_values: vec![2, 3, 4],
            weight: 1,
            l_max: 1,
            k_max: 2.0,
            fractional: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsacConfig {
    /// Scenario file, resolved relative to the config file and inlined on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default = "default_allocation")]
    pub allocation: Allocation,
    #[serde(default)]
    pub precoded: bool,
    #[serde(default)]
    pub user: usize,
}

fn default_allocation() -> Allocation {
    Allocation::Radar
}

impl IsacConfig {
    pub fn scenario(&self) -> Result<&Scenario> {
        self.scenario
            .as_ref()
            .ok_or_else(|| Error::config("isac.scenario", "no scenario given"))
    }
}

fn default_seed() -> u64 {
    1
}

fn default_constellation() -> Constellation {
    Constellation::Bpsk
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Sweep points: SNR in dB, or radar SNR for `isac_sensing`. Ignored by `coding_gain`.
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default = "default_constellation")]
    pub constellation: Constellation,
    #[serde(default)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub detector: DetectorSpec,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default)]
    pub code: CodeConfig,
    #[serde(default)]
    pub se: SeConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isac: Option<IsacConfig>,
    /// Record wall time in the `seconds` column. Off by default so outputs are reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    /// Worker threads; 0 means `OTFS_LAB_JOBS` or all cores. Never written to outputs.
    #[serde(default, skip_serializing)]
    pub jobs: usize,
}

impl ExperimentConfig {
    /// Parses TOML; errors name the offending field.
    pub fn from_toml(s: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(s)
            .map_err(|e| Error::config("<document>", e.to_string().trim()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().to_string().trim(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and inlines any ISAC scenario file it references.
    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(isac) = cfg.isac.as_mut() {
            if let Some(file) = isac.scenario_file.take() {
                let p = path.parent().unwrap_or(FsPath::new(".")).join(&file);
                let s = std::fs::read_to_string(&p).map_err(|e| {
                    Error::config("isac.scenario_file", format!("{}: {e}", p.display()))
                })?;
                isac.scenario = Some(Scenario::from_json(&s)?);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    /// Paths per frame, when the configuration fixes it.
    fn path_count(&self) -> Option<usize> {
        if self.kind == ExperimentKind::IsacFer {
            let isac = self.isac.as_ref()?;
            return isac
                .scenario
                .as_ref()?
                .users
                .get(isac.user)
                .map(|u| u.paths.len());
        }
        match &self.channel {
            ChannelConfig::Awgn => Some(1),
            ChannelConfig::Random(s) => Some(s.paths),
            ChannelConfig::Fixed { gains, .. } => Some(gains.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let needs_sweep = self.kind != ExperimentKind::CodingGain;
        if needs_sweep && self.snr_db.is_empty() {
            return Err(Error::config(
                "snr_db",
                "at least one sweep point is required",
            ));
        }
        if self.snr_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("snr_db", "sweep points must be finite"));
        }
        if self.stop.trials == 0 || self.stop.chunk == 0 {
            return Err(Error::config("stop", "trials and chunk must be positive"));
        }
        self.frame
            .params()
            .validate()
            .map_err(|e| Error::config("frame", e.to_string()))?;
        if let ChannelConfig::Random(spec) = &self.channel {
            if spec.paths == 0 {
                return Err(Error::config("channel.paths", "must be at least 1"));
            }
            if spec.l_max >= self.frame.m {
                return Err(Error::config("channel.l_max", "must be below frame.m"));
            }
            if !(spec.k_max >= 0.0) || spec.k_max > self.frame.n as f64 / 2.0 {
                return Err(Error::config(
                    "channel.k_max",
                    "must lie in [0, frame.n / 2]",
                ));
            }
            if let PowerDelayProfile::Exponential { exponent } = spec.profile {
                if !exponent.is_finite() {
                    return Err(Error::config("channel.profile.exponent", "must be finite"));
                }
            }
        }
        self.channel
            .fixed(self.frame.params())
            .map_err(|e| Error::config("channel", e.to_string()))?;
        match self.detector {
            DetectorSpec::Hybrid {
                damping: Some(d),
                l,
                ..
            } if l != 0 || !(d > 0.0 && d <= 1.0) => {
                return Err(Error::config(
                    "detector.damping",
                    "only valid for l = 0, in (0, 1]",
                ));
            }
            DetectorSpec::CrossDomain { iterations: 0 } => {
                return Err(Error::config("detector.iterations", "must be at least 1"));
            }
            _ => {}
        }
        if let (DetectorSpec::Hybrid { l, .. }, Some(p)) = (self.detector, self.path_count()) {
            if l >= p {
                return Err(Error::config(
                    "detector.l",
                    format!("must be below the path count {p}"),
                ));
            }
        }
        match self.kind {
            ExperimentKind::FerCoded => {
                if !matches!(
                    self.detector,
                    DetectorSpec::MapSpa { .. } | DetectorSpec::Hybrid { damping: None, .. }
                ) {
                    return Err(Error::config(
                        "detector.kind",
                        "turbo equalization needs map_spa or undamped hybrid",
                    ));
                }
                if self.code.names.is_empty() && !self.code.uncoded {
                    return Err(Error::config("code.names", "nothing to simulate"));
                }
                for n in &self.code.names {
                    crate::coding::ConvCode::by_name(n)
                        .map_err(|e| Error::config("code.names", e.to_string()))?;
                }
                if self.code.outer_iters == 0 {
                    return Err(Error::config("code.outer_iters", "must be at least 1"));
                }
                if self.constellation != Constellation::Bpsk {
                    return Err(Error::config("constellation", "coded experiments use BPSK"));
                }
            }
            ExperimentKind::CodingGain => {
                if self.analysis.p_values.is_empty() || self.analysis.p_values.contains(&0) {
                    return Err(Error::config(
                        "analysis.p_values",
                        "need positive path counts",
                    ));
                }
                if self.analysis.weight == 0 || self.analysis.weight > self.frame.m * self.frame.n {
                    return Err(Error::config("analysis.weight", "must lie in 1..=MN"));
                }
            }
            ExperimentKind::IsacSensing | ExperimentKind::IsacFer => {
                let isac = self.isac.as_ref().ok_or_else(|| {
                    Error::config("isac", "section required for ISAC experiments")
                })?;
                if isac.scenario.is_none() && isac.scenario_file.is_none() {
                    return Err(Error::config(
                        "isac.scenario",
                        "give scenario or scenario_file",
                    ));
                }
                if let Some(sc) = &isac.scenario {
                    sc.validate()?;
                    if isac.user >= sc.users.len() {
                        return Err(Error::config("isac.user", "no such user"));
                    }
                }
            }
            ExperimentKind::MseTrace => {
                if !matches!(self.detector, DetectorSpec::CrossDomain { .. }) {
                    return Err(Error::config(
                        "detector.kind",
                        "mse_trace needs cross_domain",
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}
