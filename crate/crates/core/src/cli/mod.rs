//! `gsdd` command-line entry point.
//!
//! Every command reads an optional TOML run configuration (`--config`),
//! applies flag overrides, and writes the resolved configuration into its
//! output directory. Exit codes: 0 success, 1 runtime failure, 2 bad usage.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    load_stats, save_stats, stats_sidecar, BenchConfig, BudgetConfig, DataConfig, DataSource,
    PruneConfig, RenderOptions, RunConfig, RESOLVED_CONFIG_FILE,
};

use crate::analysis::{PruneMode, RenderPath};
use crate::error::GsddError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "gsdd",
    version,
    about = "Gaussian-splatting dataset distillation toolkit"
)]
pub struct Cli {
    /// Renderer worker threads (default: available cores).
    #[arg(long, global = true, env = "GSDD_WORKERS")]
    pub workers: Option<usize>,
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit Gaussian images to real images (one fit per image).
    Fit(FitArgs),
    /// Distill a dataset into Gaussian images by distribution matching.
    Distill(DistillArgs),
    /// Render a container to one image file per synthetic image.
    Render(RenderArgs),
    /// Prune Gaussians from every image of a container.
    Prune(PruneArgs),
    /// Train a small classifier on a rendered container and report test accuracy.
    Eval(EvalArgs),
    /// Time the reference and batched renderers over a grid.
    Bench(BenchArgs),
    /// Finite-difference check of the render gradients on random cases.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long, value_enum)]
    pub data: Option<DataSource>,
    /// CIFAR training batch file (repeatable).
    #[arg(long = "train-file")]
    pub train_files: Vec<PathBuf>,
    /// CIFAR test batch file (repeatable).
    #[arg(long = "test-file")]
    pub test_files: Vec<PathBuf>,
    #[arg(long)]
    pub toy_classes: Option<usize>,
    #[arg(long)]
    pub toy_size: Option<usize>,
    #[arg(long)]
    pub toy_train_per_class: Option<usize>,
    #[arg(long)]
    pub toy_test_per_class: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_boundary: Option<f64>,
    #[arg(long)]
    pub epsilon_clip: Option<f32>,
    /// Render from bf16-cast parameters during training.
    #[arg(long)]
    pub bf16: Option<bool>,
}

#[derive(Debug, Args, Default)]
pub struct RenderFlags {
    #[arg(long)]
    pub prefilter: Option<bool>,
    #[arg(long)]
    pub ssaa: Option<usize>,
    /// Culling radius in standard deviations (`inf` disables culling).
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub tile_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of training images to fit (taken from the start of the split).
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Gaussians per image; derived from --ipc/--gpc when absent.
    #[arg(long = "gaussians")]
    pub gaussians: Option<usize>,
    #[arg(long)]
    pub ipc: Option<usize>,
    #[arg(long)]
    pub gpc: Option<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ipc: Option<usize>,
    #[arg(long)]
    pub gpc: Option<usize>,
    #[arg(long)]
    pub init_steps: Option<usize>,
    #[arg(long)]
    pub batch_real: Option<usize>,
    #[arg(long)]
    pub batch_syn: Option<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Container to render.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write PNG instead of PPM.
    #[arg(long)]
    pub png: bool,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_prune_mode)]
    pub mode: Option<PruneMode>,
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Also report test accuracy of the pruned set.
    #[arg(long)]
    pub with_eval: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub render: RenderFlags,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub res: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub batch: Vec<usize>,
    #[arg(long = "gaussians", value_delimiter = ',')]
    pub gaussians: Vec<usize>,
    #[arg(long = "path", value_delimiter = ',', value_parser = parse_render_path)]
    pub paths: Vec<RenderPath>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub warmups: Option<usize>,
    #[arg(long)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_prune_mode(s: &str) -> Result<PruneMode, String> {
    s.parse().map_err(|e: GsddError| e.to_string())
}

fn parse_render_path(s: &str) -> Result<RenderPath, String> {
    s.parse().map_err(|e: GsddError| e.to_string())
}

/// Failure classes of a command, mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(GsddError),
}

impl From<GsddError> for CliError {
    fn from(e: GsddError) -> Self {
        Self::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `gsdd --help` for usage");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
