use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::plan::InitKind;

#[derive(Debug, Parser)]
#[command(name = "tomoforge", version, about = "Fourier-domain MBIR for parallel-beam tomography")]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic phantom volume.
    Phantom(PhantomArgs),
    /// Forward-project a volume into a sinogram.
    Project(ProjectArgs),
    /// Filtered backprojection.
    Fbp(FbpArgs),
    /// Model-based iterative reconstruction.
    Mbir(MbirArgs),
    /// Run one of the benchmark scenarios and write its CSV table.
    Bench(BenchArgs),
    /// Export one slice as an 8-bit PNG or PGM.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhantomKind {
    SheppLogan,
    Disk,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, value_enum)]
    pub kind: PhantomKind,
    #[arg(long)]
    pub side: usize,
    #[arg(long, default_value_t = 1)]
    pub slices: usize,
    /// Disk radius in pixels [default: side / 4].
    #[arg(long)]
    pub radius: Option<f64>,
    /// Disk value.
    #[arg(long, default_value_t = 1.0)]
    pub value: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Number of equispaced angles over [0, pi).
    #[arg(long)]
    pub angles: usize,
    /// Detector bins [default: image side].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Detector offset in pixels.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub offset: f64,
    /// Gaussian noise standard deviation relative to the sinogram peak.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = tomoforge_core::radon::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FbpArgs {
    #[arg(long)]
    pub sino: PathBuf,
    /// Image side [default: detector bins].
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MbirArgs {
    /// Sinogram file; may instead come from the plan's `[inputs]`.
    #[arg(long)]
    pub sino: Option<PathBuf>,
    /// TOML reconstruction plan; defaults apply without one.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub init: Option<InitKind>,
    /// Grid levels including the finest.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// `channel` or `tcp`.
    #[arg(long)]
    pub transport: Option<String>,
    /// Per-iteration convergence CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchKind {
    Toeplitz,
    Init,
    Multires,
    Scaling,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub kind: BenchKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Image sides (toeplitz) or the single side (others).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub angles: Option<usize>,
    /// Worker counts for the scaling bench.
    #[arg(long, value_delimiter = ',')]
    pub workers: Vec<usize>,
    /// Iteration budget (init, scaling) or single-grid budget (multires).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Slices of the scaling volume.
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub transport: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Slice index [default: middle slice].
    #[arg(long)]
    pub slice: Option<usize>,
    /// Output `.png` or `.pgm`; the window is appended to the stem.
    #[arg(long)]
    pub out: PathBuf,
}
