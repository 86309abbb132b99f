//! Experiment driver: TOML configuration, seeded parallel Monte Carlo and CSV / JSON output.

pub mod config;
pub mod emit;
pub mod run;
pub mod stats;

pub use config::{
    AnalysisConfig, ChannelConfig, CodeConfig, DetectorSpec, ExperimentConfig, ExperimentKind,
    FrameConfig, IsacConfig, SeConfig, StopRule,
};
pub use emit::{emit, Format, ResultRow, ResultTable};
pub use run::{detect_frame, resolve_jobs, run, trial_rng, trial_seed, Sample, JOBS_ENV};
pub use stats::{q_function, wilson, Moments};
