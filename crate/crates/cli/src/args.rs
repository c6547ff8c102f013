use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use snlmm::scores::Allocation;
use snlmm::StatKind;

#[derive(Debug, Parser)]
#[command(name = "snlmm", version, about = "Score-based change-point tests for two-level linear mixed models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model by maximum likelihood and report the estimates.
    Fit(FitArgs),
    /// Run change-point tests on the fitted model.
    Test(TestArgs),
    /// Write the per-split-point trace of one test as CSV.
    Trace(TestArgs),
    /// Simulate null tables of critical values.
    Critvals(CritvalsArgs),
    /// Run a Monte Carlo power study.
    Power(PowerArgs),
    /// Draw one dataset from the simulation design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Long-format CSV, one row per observation.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub cluster: Option<String>,
    #[arg(long)]
    pub response: Option<String>,
    /// Fixed-effect columns, comma separated; `1` is the intercept.
    #[arg(long, value_delimiter = ',')]
    pub fixed: Option<Vec<String>>,
    /// Random-effect columns, comma separated; `1` is the intercept.
    #[arg(long, value_delimiter = ',')]
    pub random: Option<Vec<String>>,
    /// JSON file whose fields override the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Column that orders the observations.
    #[arg(long)]
    pub aux: Option<String>,
    /// Parameters to test, comma separated; all parameters when absent.
    #[arg(long, value_delimiter = ',')]
    pub params: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub stats: Option<Vec<StatKind>>,
    /// Test the listed parameters jointly instead of one at a time.
    #[arg(long)]
    pub joint: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Seed of the null-table simulation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub null_replications: Option<usize>,
    #[arg(long)]
    pub null_grid: Option<usize>,
    /// Directory of cached null tables.
    #[arg(long)]
    pub null_cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub allocation: Option<AllocationArg>,
}

#[derive(Debug, Clone, Args)]
pub struct CritvalsArgs {
    #[arg(long, value_delimiter = ',', default_value = "SN")]
    pub stats: Vec<StatKind>,
    /// Number of jointly tested parameters.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = snlmm::critvals::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = snlmm::critvals::DEFAULT_REPLICATIONS)]
    pub replications: usize,
    #[arg(long, default_value_t = snlmm::critvals::DEFAULT_SEED)]
    pub seed: u64,
    /// Split fractions for SN_ord, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub cuts: Option<Vec<f64>>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Store full tables here for later `test` runs.
    #[arg(long)]
    pub null_cache: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PowerArgs {
    /// Study configuration (JSON); overrides the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub stats: Option<Vec<StatKind>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub allocation: Option<AllocationArg>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub null_cache: Option<PathBuf>,
    /// Directory for per-condition results; finished conditions are reused.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// JSON report; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Table in CSV layout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 24)]
    pub subjects: usize,
    /// Size of the change in asymptotic standard errors.
    #[arg(long, default_value_t = 0.0)]
    pub d: f64,
    #[arg(long, default_value = "beta0")]
    pub changed: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum AllocationArg {
    Residual,
    Whitened,
}

impl From<AllocationArg> for Allocation {
    fn from(a: AllocationArg) -> Self {
        match a {
            AllocationArg::Residual => Allocation::Residual,
            AllocationArg::Whitened => Allocation::Whitened,
        }
    }
}
