mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use bodf::rjmcmc::WeightsNormalization;
use bodf::tempering::SwapRule;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Error classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
    #[error("normalizer table check failed: {0}")]
    TableCheck(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 5,
            CliError::TableCheck(_) => 6,
        }
    }
}

impl From<bodf::Error> for CliError {
    fn from(e: bodf::Error) -> Self {
        use bodf::Error as E;
        let msg = e.to_string();
        match e {
            E::Parse { .. } | E::Json(_) | E::Table(_) => CliError::Parse(msg),
            E::Range { .. } | E::InvalidQuaternion(..) | E::InvalidArgument(_) => CliError::Numeric(msg),
            E::UnknownGroup { .. } | E::InvalidGroup { .. } => CliError::Config(vec![msg]),
            E::Io(_) => CliError::Io(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Parse(e.to_string())
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SwapRuleArg {
    Corrected,
    Literal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightsArg {
    Reflect,
    Cumulative,
    Literal,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Total iterations including burn-in.
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    burnin: Option<usize>,
    #[arg(long, global = true)]
    mmax: Option<usize>,
    /// Comma-separated temperatures, first 1.0.
    #[arg(long, global = true, value_delimiter = ',')]
    temps: Option<Vec<f64>>,
    #[arg(long, global = true)]
    force_uniform: bool,
    #[arg(long, global = true, value_enum)]
    swap_rule: Option<SwapRuleArg>,
    #[arg(long, global = true, value_enum)]
    weights_normalization: Option<WeightsArg>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Orientation data file.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Normalizer table file.
    #[arg(long, global = true)]
    table: Option<PathBuf>,
    #[arg(long, global = true)]
    crystal: Option<String>,
    #[arg(long, global = true)]
    specimen: Option<String>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Parser)]
#[command(name = "bodf", version, about = "Bayesian orientation distribution functions")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SimulateKind {
    Santafe,
    Sbm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExportSource {
    /// MAP state of a trace.
    Map,
    /// Smoothed predictive draws.
    Ppd,
    /// Kernel density estimate of the data.
    Kde,
}

#[derive(Debug, Subcommand)]
pub enum TableCommand {
    /// Build a normalizer table and write it to `--table` (or `<out>/table.txt`).
    Build {
        #[arg(long)]
        lambda_max: Option<f64>,
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Validate a normalizer table; exits with code 6 on failure.
    Check {
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reversible-jump fit of a symmetric Bingham mixture.
    Fit,
    /// Parallel-tempered fit.
    PtFit,
    /// Posterior predictive draws from a trace.
    Ppd {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        n_new: Option<usize>,
        /// Fixed smoothing concentration instead of cross-validation.
        #[arg(long)]
        kappa: Option<f64>,
        /// Also write the smoothed predictive density on the configured grid.
        #[arg(long)]
        grid: bool,
    },
    /// Kernel density estimate of the data on the configured grid.
    Kde {
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Generate a synthetic dataset.
    Simulate {
        #[arg(value_enum)]
        kind: SimulateKind,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Mixture state JSON for `sbm`; a built-in two-component state otherwise.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Build or check normalizer tables.
    Table {
        #[command(subcommand)]
        action: TableCommand,
    },
    /// Write a density grid or pole figures.
    Export {
        #[arg(long, value_enum)]
        source: ExportSource,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Predictive draws CSV for `--source ppd`.
        #[arg(long)]
        draws: Option<PathBuf>,
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Posterior summaries and histograms from a trace.
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<(), CliError> {
    let c = cli.common;
    let mut cfg = match &c.config {
        Some(p) => config::RunConfig::from_file(p)?,
        None => config::RunConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = c.iters {
        cfg.sampler.n_iters = v;
    }
    if let Some(v) = c.burnin {
        cfg.sampler.burn_in = v;
    }
    if let Some(v) = c.mmax {
        cfg.hyperparams.m_max = v;
    }
    if let Some(v) = c.temps {
        cfg.ladder = bodf::tempering::TemperatureLadder::new(v).map_err(|e| CliError::Config(vec![format!("--temps: {e}")]))?;
    }
    if c.force_uniform {
        cfg.forced_uniform = true;
    }
    if let Some(v) = c.swap_rule {
        cfg.swap_rule = match v {
            SwapRuleArg::Corrected => SwapRule::Corrected,
            SwapRuleArg::Literal => SwapRule::Literal,
        };
    }
    if let Some(v) = c.weights_normalization {
        cfg.sampler.weights = match v {
            WeightsArg::Reflect => WeightsNormalization::Reflect,
            WeightsArg::Cumulative => WeightsNormalization::Cumulative,
            WeightsArg::Literal => WeightsNormalization::Literal,
        };
    }
    if c.out.is_some() {
        cfg.out = c.out;
    }
    if c.data.is_some() {
        cfg.data = c.data;
    }
    if c.table.is_some() {
        cfg.table = c.table;
    }
    if let Some(v) = c.crystal {
        cfg.crystal = v;
    }
    if let Some(v) = c.specimen {
        cfg.specimen = v;
    }
    commands::dispatch(cli.command, cfg, args)
}
