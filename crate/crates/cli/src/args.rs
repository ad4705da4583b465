//! Flag definitions. Values are read back generically through `Settings`, so
//! the field types here only drive clap's validation and help text.
#![allow(dead_code)]

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "neb",
    version,
    about = "Learn smoothed energies with DEEN, denoise with single-step jumps, sample with walk-jump chains",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an MLP energy to a dataset at one noise level
    Train(TrainArgs),
    /// Single-step denoising of (optionally freshly noised) samples
    Denoise(DenoiseArgs),
    /// Langevin walk in noisy space with periodic jumps to clean space
    Sample(SampleArgs),
    /// Noise-free descent of the energy to its attractors
    Memory(MemoryArgs),
    /// Attractor flow from uniform random starts in the unit hypercube
    Probe(ProbeArgs),
    /// Pairwise distance statistics scaled by 2 sqrt(d)
    Chi(ChiArgs),
    /// Squared-norm moments of isotropic Gaussian draws
    Concentrate(ConcentrateArgs),
    /// Squared-norm moments of a noisy thin Gaussian manifold
    Disintegrate(DisintegrateArgs),
    /// Compare analytic gradients of a random MLP with finite differences
    Gradcheck(GradcheckArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// key=value file applied under command-line flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seed for every random stream
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data: CSV rows or an IDX image file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use only the first N rows
    #[arg(long)]
    pub limit: Option<usize>,
    /// Noise level the energy is learned at
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Minibatch size
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    /// Hidden layer widths, comma separated
    #[arg(long, default_value = "64,64")]
    pub arch: String,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Clean samples (noised here) or, with --noisy, noisy samples
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Jump noise level; defaults to the checkpoint's training sigma
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Treat the input as already noisy
    #[arg(long)]
    pub noisy: bool,
    /// Tiles per row in image grids
    #[arg(long, default_value_t = 10)]
    pub grid_cols: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Data rows for data_plus_noise and given initializations
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Jump noise level; defaults to the checkpoint's training sigma
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Langevin step scale; defaults to sigma / 100
    #[arg(long)]
    pub eps: Option<f64>,
    /// Steps between jumps
    #[arg(long, default_value_t = 10_000)]
    pub jump_period: usize,
    /// Total Langevin steps per chain
    #[arg(long, default_value_t = 100_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// data_plus_noise, uniform_hypercube or given
    #[arg(long, default_value = "data_plus_noise")]
    pub init: String,
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
    /// Record walk state and energy every N steps (0: never)
    #[arg(long, default_value_t = 10_000)]
    pub record_every: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct MemoryArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Starting points, CSV or IDX
    #[arg(long)]
    pub start: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Gaussian perturbation added to the starting points
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Base step size; defaults to sigma^2 / 10
    #[arg(long)]
    pub step: Option<f64>,
    /// Gradient norm at which a flow stops
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 10)]
    pub grid_cols: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Training data for the distance-to-data histogram
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Number of uniform starting points
    #[arg(long, default_value_t = 64)]
    pub seeds: usize,
    /// Base step size; defaults to sigma^2 / 10
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    /// Histogram bins
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, default_value_t = 8)]
    pub grid_cols: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ChiArgs {
    /// Samples, CSV or IDX
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Build the full n x n matrix instead of streaming pairs
    #[arg(long)]
    pub materialize: bool,
    /// Memory budget in MiB for the exact streaming median
    #[arg(long, default_value_t = 512)]
    pub budget_mb: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ConcentrateArgs {
    /// Dimension
    #[arg(long, default_value_t = 10_000)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct DisintegrateArgs {
    /// Ambient dimension
    #[arg(long, default_value_t = 10_000)]
    pub d: usize,
    /// Number of unit-variance manifold directions
    #[arg(long, default_value_t = 10)]
    pub d_sharp: usize,
    /// Standard deviation off the manifold
    #[arg(long, default_value_t = 0.01)]
    pub eps_manifold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Input dimension
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value = "16,16")]
    pub arch: String,
    /// Rows in the loss batch
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Central difference step
    #[arg(long, default_value_t = 1e-5)]
    pub fd_step: f64,
    #[command(flatten)]
    pub run: RunArgs,
}
