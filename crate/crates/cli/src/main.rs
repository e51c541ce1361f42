//! `armplace`: dataset generation, model training, placement optimization,
//! trajectory evaluation, checker benchmarking and heatmap export.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use armplace::optimizer::DEFAULT_STARTS;
use armplace::scoring::{
    DEFAULT_ENV_TRAINING_ROWS, DEFAULT_JOINT_SAMPLES, DEFAULT_SELF_TRAINING_ROWS, DEFAULT_SETUPS,
};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "armplace", version, about = "Base placement for a two-arm surgical robot")]
pub struct Cli {
    /// World layout JSON; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed, recorded in every manifest.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score random setups and write the dataset CSV.
    Sample(SampleArgs),
    /// Train the collision proxies on geometric labels.
    TrainFastron(TrainFastronArgs),
    /// Fit the five score regressors to a dataset.
    FitSvr(FitSvrArgs),
    /// Maximize the weighted predicted score.
    Optimize(OptimizeArgs),
    /// Follow the canonical trajectories from one or more setups.
    Evaluate(EvaluateArgs),
    /// Time the geometric checker against the proxy.
    Bench(BenchArgs),
    /// Per-arm predicted score grid, maximized over heading.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Geometric,
    Fastron,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value_t = DEFAULT_SETUPS)]
    pub setups: usize,
    /// Joint-configuration pairs per setup.
    #[arg(long, default_value_t = DEFAULT_JOINT_SAMPLES)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Backend::Geometric)]
    pub checker: Backend,
    /// Proxy model directory, required by `--checker fastron`.
    #[arg(long)]
    pub proxies: Option<PathBuf>,
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainFastronArgs {
    #[arg(long, default_value_t = DEFAULT_ENV_TRAINING_ROWS)]
    pub env_rows: usize,
    #[arg(long, default_value_t = DEFAULT_SELF_TRAINING_ROWS)]
    pub self_rows: usize,
    /// Trailing fraction of each set kept out of training for the report.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    /// JSON with `env` and `self` training parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value = "proxies")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitSvrArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    /// Trailing fraction of rows scored for the holdout report.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// JSON with `reach`, `env` and `self` regression parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value = "maps")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    #[arg(long, default_value_t = 1.0)]
    pub w_reach: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_self: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_env: f64,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, default_value = "maps")]
    pub maps: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long, default_value_t = DEFAULT_STARTS)]
    pub starts: usize,
    #[arg(long, default_value = "solution.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Solution file from `optimize`; repeatable.
    #[arg(long)]
    pub solution: Vec<PathBuf>,
    /// Explicit setup `x1,y1,th1,x2,y2,th2`; repeatable.
    #[arg(long, value_parser = parse_floats::<6>, allow_hyphen_values = true)]
    pub setup: Vec<[f64; 6]>,
    /// Optional JSON copy of the reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "proxies")]
    pub proxies: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub queries: usize,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long, default_value = "maps")]
    pub maps: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub arm: u8,
    /// Grid points per axis.
    #[arg(long, default_value_t = 50)]
    pub res: usize,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Pose `x,y,th` of the other arm; defaults to its grid center.
    #[arg(long, value_parser = parse_floats::<3>, allow_hyphen_values = true)]
    pub other: Option<[f64; 3]>,
    /// Output CSV; defaults to `heatmap_arm<N>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got {}", parts.len()));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{p}` is not a finite number"))?;
    }
    Ok(out)
}

/// An invalid request, as opposed to bad data or models.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_DATA)
            }
        }
    }
}
