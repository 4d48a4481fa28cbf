//! `qfc` — score, combine, and backtest quantile-format forecasts.
//!
//! Exit codes: 0 on success, 1 on data errors (unreadable or malformed
//! input, insufficient training history), 2 on usage errors (clap's
//! default for bad flags, including unknown combination methods).

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qfc_core::model::{DEFAULT_HORIZON, DEFAULT_TRAINING_WINDOW};

mod commands;
mod engine;
mod synthcfg;

/// The seven combination methods exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Method {
    /// Equal-weight mixture of the admitted models.
    StackedEqual,
    /// Time-invariant decayed reciprocal-score weights.
    StackedTi,
    /// Time-varying weights: score-based at lead 1 easing to uniform at H.
    StackedTv,
    /// Mixture weights fitted by minimizing training CRPS.
    StackedOpt,
    /// Gaussian ensemble regression on model medians.
    Emos,
    /// Quantile regression averaging with shared non-negative slopes.
    Qra,
    /// QRA with per-model discontinuity shifts.
    Sqra,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::StackedEqual,
        Method::StackedTi,
        Method::StackedTv,
        Method::StackedOpt,
        Method::Emos,
        Method::Qra,
        Method::Sqra,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::StackedEqual => "stacked-equal",
            Method::StackedTi => "stacked-ti",
            Method::StackedTv => "stacked-tv",
            Method::StackedOpt => "stacked-opt",
            Method::Emos => "emos",
            Method::Qra => "qra",
            Method::Sqra => "sqra",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shared run parameters. Defaults match the combiners' reference
/// configuration (20-day training window, 14-day horizon, λ = 0.9).
#[derive(Debug, Clone, Args)]
pub struct RunFlags {
    /// Training window length T_p in days.
    #[arg(long = "train-window", default_value_t = DEFAULT_TRAINING_WINDOW)]
    pub train_window: usize,

    /// Forecast horizon H in days.
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,

    /// Per-day score decay rate λ for the stacking weights.
    #[arg(long, default_value_t = 0.9)]
    pub lambda: f64,

    /// Comma-separated quantile levels for combined output.
    #[arg(
        long,
        value_delimiter = ',',
        default_values_t = qfc_core::model::DEFAULT_QUANTILE_LEVELS
    )]
    pub quantiles: Vec<f64>,

    /// Seed for every stochastic fit; fixing it makes runs bit-reproducible.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Admit models whose training windows are shorter than T_p (late
    /// starters); by default only complete windows participate.
    #[arg(long = "include-incomplete")]
    pub include_incomplete: bool,
}

#[derive(Debug, Parser)]
#[command(
    name = "qfc",
    version,
    about = "Combine, score, and backtest quantile-format epidemic forecasts"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every forecast with matching observations.
    Score(ScoreArgs),
    /// Fit one combination method at the latest delivery date.
    Combine(CombineArgs),
    /// Rolling-origin backtest over the delivery calendar.
    Backtest(BacktestArgs),
    /// Generate a synthetic observation series plus forecaster deliveries.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Forecast CSV path.
    #[arg(long)]
    pub forecasts: PathBuf,

    /// Observation CSV path.
    #[arg(long)]
    pub observations: PathBuf,

    /// Report CSV destination ("-" for stdout).
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    /// Forecast CSV path.
    #[arg(long)]
    pub forecasts: PathBuf,

    /// Observation CSV path.
    #[arg(long)]
    pub observations: PathBuf,

    /// Combination method.
    #[arg(long, value_enum)]
    pub method: Method,

    /// Model-column label for the combined rows (defaults to the method
    /// name); lets differently fitted runs emit comparable files.
    #[arg(long)]
    pub label: Option<String>,

    /// Combined forecast CSV destination ("-" for stdout).
    #[arg(long, default_value = "-")]
    pub out: PathBuf,

    /// Optional JSON sidecar with the fitted parameters and run config.
    #[arg(long)]
    pub params: Option<PathBuf>,

    #[command(flatten)]
    pub flags: RunFlags,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// Forecast CSV path.
    #[arg(long)]
    pub forecasts: PathBuf,

    /// Observation CSV path.
    #[arg(long)]
    pub observations: PathBuf,

    /// Methods to run (comma-separated; defaults to all seven).
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = Method::ALL)]
    pub methods: Vec<Method>,

    /// Output directory for the report files.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,

    /// Stride over the delivery calendar: refit every Nth delivery date.
    #[arg(long, default_value_t = 1)]
    pub every: usize,

    #[command(flatten)]
    pub flags: RunFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario config JSON; omit for the built-in demo scenario.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Truth-process and noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Forecast CSV destination.
    #[arg(long = "out-forecasts")]
    pub out_forecasts: PathBuf,

    /// Observation CSV destination.
    #[arg(long = "out-observations")]
    pub out_observations: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Score(args) => commands::score(&args),
        Command::Combine(args) => commands::combine(&args),
        Command::Backtest(args) => commands::backtest(&args),
        Command::Synth(args) => commands::synth(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
