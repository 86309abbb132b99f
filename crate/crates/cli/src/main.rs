//! `otfs-lab`: runs experiments from TOML configs and exposes the analysis and ISAC tools.
//!
//! Exit codes: 0 on success, 2 on configuration or I/O errors, 3 on numeric failures.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use otfs_core::analysis::{bound_row, codeword_difference_matrix, random_bpsk_error, PathEnsemble};
use otfs_core::harness::{
    run, trial_rng, AnalysisConfig, DetectorSpec, ExperimentConfig, ExperimentKind, Format,
    IsacConfig, ResultTable, JOBS_ENV,
};
use otfs_core::isac::{Allocation, Scenario};
use otfs_core::{Error, FrameParams};

#[derive(Parser)]
#[command(
    name = "otfs-lab",
    version,
    about = "Delay-Doppler communications laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Coding-gain and PEP bound analysis.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Spatially spread OTFS sensing and communication.
    #[command(subcommand)]
    Isac(Isac),
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; defaults to the extension of `--out`, else csv.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Worker threads.
    #[arg(long, env = JOBS_ENV)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct FrameArgs {
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Non-zero entries of the BPSK error sequence.
    #[arg(long, default_value_t = 1)]
    weight: usize,
    #[arg(long, default_value_t = 1)]
    l_max: usize,
    #[arg(long, default_value_t = 2.0)]
    k_max: f64,
    #[arg(long)]
    fractional: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Analyze {
    /// Average coding gain per path count.
    CodingGain {
        #[command(flatten)]
        frame: FrameArgs,
        /// Path counts.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        p: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Eigenvalue product and determinant bounds on random instances, as CSV.
    Bounds {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long, default_value_t = 3)]
        p: usize,
        #[arg(long, default_value_t = 10)]
        instances: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AllocationArg {
    Equal,
    Radar,
}

impl From<AllocationArg> for Allocation {
    fn from(a: AllocationArg) -> Self {
        match a {
            AllocationArg::Equal => Allocation::Equal,
            AllocationArg::Radar => Allocation::Radar,
        }
    }
}

#[derive(Args)]
struct IsacArgs {
    scenario: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,5")]
    snr_db: Vec<f64>,
    #[arg(long, value_enum, default_value = "radar")]
    allocation: AllocationArg,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Subcommand)]
enum Isac {
    /// Angle-of-arrival miss-detection probability versus radar SNR.
    Sense(IsacArgs),
    /// Uncoded error rates of one user's downlink versus SNR.
    Fer {
        #[command(flatten)]
        args: IsacArgs,
        #[arg(long, default_value_t = 0)]
        user: usize,
        /// Apply the delay-Doppler precoder with perfect estimates.
        #[arg(long)]
        precoded: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("otfs-lab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::Complexity(_) => 3,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            execute(cfg, &out)
        }
        Command::Analyze(Analyze::CodingGain {
            frame,
            p,
            trials,
            out,
        }) => {
            let mut cfg = base_config(ExperimentKind::CodingGain)?;
            cfg.seed = frame.seed;
            cfg.frame.m = frame.m;
            cfg.frame.n = frame.n;
            cfg.stop.trials = trials;
            cfg.analysis = AnalysisConfig {
                p_values: p,
                weight: frame.weight,
                l_max: frame.l_max,
                k_max: frame.k_max,
                fractional: frame.fractional,
            };
            execute(cfg, &out)
        }
        Command::Analyze(Analyze::Bounds {
            frame,
            p,
            instances,
        }) => bounds(&frame, p, instances),
        Command::Isac(Isac::Sense(args)) => {
            let cfg = isac_config(ExperimentKind::IsacSensing, &args, 0, false)?;
            execute(cfg, &args.out)
        }
        Command::Isac(Isac::Fer {
            args,
            user,
            precoded,
        }) => {
            let mut cfg = isac_config(ExperimentKind::IsacFer, &args, user, precoded)?;
            cfg.constellation = otfs_core::modem::Constellation::Qpsk;
            cfg.detector = DetectorSpec::MapSpa { max_iters: 10 };
            cfg.validate()?;
            execute(cfg, &args.out)
        }
    }
}

fn base_config(kind: ExperimentKind) -> Result<ExperimentConfig, Error> {
    // A stub with one sweep point resolves every default; callers fill in the rest.
    let mut cfg = ExperimentConfig::from_toml("kind = \"ber\"\nsnr_db = [0.0]\n")?;
    cfg.kind = kind;
    Ok(cfg)
}

fn isac_config(
    kind: ExperimentKind,
    args: &IsacArgs,
    user: usize,
    precoded: bool,
) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(&args.scenario).map_err(|e| Error::Config {
        path: args.scenario.display().to_string(),
        msg: e.to_string(),
    })?;
    let scenario = Scenario::from_json(&text)?;
    let mut cfg = base_config(kind)?;
    cfg.seed = args.seed;
    cfg.snr_db = args.snr_db.clone();
    cfg.stop.trials = args.trials;
    cfg.frame.m = scenario.m;
    cfg.frame.n = scenario.n;
    cfg.isac = Some(IsacConfig {
        scenario_file: None,
        scenario: Some(scenario),
        allocation: args.allocation.into(),
        precoded,
        user,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn execute(mut cfg: ExperimentConfig, out: &OutputArgs) -> Result<(), Error> {
    if let Some(j) = out.jobs {
        if j == 0 {
            return Err(Error::Config {
                path: "jobs".into(),
                msg: "must be positive".into(),
            });
        }
        cfg.jobs = j;
    }
    let table = run(&cfg)?;
    write_table(&table, out)
}

fn format_for(out: &OutputArgs) -> Format {
    match out.format {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Json) => Format::Json,
        None => match out
            .out
            .as_deref()
            .and_then(Path::extension)
            .and_then(|e| e.to_str())
        {
            Some("json") => Format::Json,
            _ => Format::Csv,
        },
    }
}

fn write_table(table: &ResultTable, out: &OutputArgs) -> Result<(), Error> {
    let format = format_for(out);
    match &out.out {
        Some(p) => otfs_core::harness::emit(table, p, format),
        None => {
            let text = table.render(format)?;
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn bounds(frame: &FrameArgs, p: usize, instances: u64) -> Result<(), Error> {
    let params = FrameParams::grid(frame.m, frame.n);
    params.validate()?;
    if frame.weight == 0 || frame.weight > params.mn() || p == 0 {
        return Err(Error::Config {
            path: "weight".into(),
            msg: "weight must lie in 1..=MN and p must be positive".into(),
        });
    }
    let ensemble = PathEnsemble::Random {
        p,
        l_max: frame.l_max,
        k_max: frame.k_max,
        fractional: frame.fractional,
    };
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "instance,d_e2,p,rank,product,product_lb_exact,det,det_ub"
    )?;
    for i in 0..instances {
        let mut rng = trial_rng(frame.seed, 0, i);
        let e = random_bpsk_error(params.mn(), frame.weight, &mut rng);
        let (d, k) = ensemble.draw(&mut rng);
        let row = bound_row(&codeword_difference_matrix(&e, &d, &k, &params, None)?)?;
        writeln!(
            stdout,
            "{i},{},{},{},{},{},{},{}",
            row.d_e2, row.p, row.rank, row.product, row.product_lb_exact, row.det, row.det_ub
        )?;
    }
    Ok(())
}
