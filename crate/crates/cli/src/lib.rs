//! The `cotwd` command-line tool.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit code: [`EXIT_CONVERGED`], [`EXIT_MAX_ITERATIONS`] or [`EXIT_ERROR`].

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use commands::{CliError, RUN_OUTPUTS};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_MAX_ITERATIONS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cotwd", version, about = "Joint row/column hierarchies via alternating tree-Wasserstein distances")]
pub struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "COTWD_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn sample and feature trees and their TWDs from a data matrix.
    Run(RunArgs),
    /// Generate the synthetic user × video toy data with labels.
    GenToy(GenToyArgs),
    /// kNN accuracy of a distance matrix against class labels.
    EvalKnn(EvalKnnArgs),
    /// L1 norm of the Haar coefficients of a data matrix under two trees.
    EvalSparsity(EvalSparsityArgs),
    /// Convert a data matrix between dense and sparse formats, or a tree to
    /// its leaf distance matrix.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Alg1,
    Alg2,
    FixedMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricChoice {
    Cosine,
    Euclidean,
    /// Read from `--sample-distances` / `--feature-distances`.
    Provided,
}

/// Input matrix options shared by several subcommands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Data matrix: `.mtx` is read as MatrixMarket, anything else as CSV/TSV.
    #[arg(long)]
    pub input: PathBuf,

    /// The first line of a dense input holds column names.
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Directory for the distance matrices, trees and history log.
    #[arg(long)]
    pub output_dir: PathBuf,

    #[arg(long, value_enum, default_value_t = Algorithm::Alg1)]
    pub algorithm: Algorithm,

    #[arg(long, default_value_t = 0.01)]
    pub gamma_r: f64,

    #[arg(long, default_value_t = 0.01)]
    pub gamma_c: f64,

    /// Largest dyadic diffusion scale K.
    #[arg(long, default_value_t = 5)]
    pub max_scale: usize,

    /// Kernel scale as a multiple of the median squared distance.
    #[arg(long, default_value_t = 0.5)]
    pub scale_multiplier: f64,

    /// Fraction in (0, 1] of the sample-tree coefficient mass kept by the
    /// filter (alg2, fixed-mode).
    #[arg(long)]
    pub threshold_r: Option<f64>,

    /// Fraction in (0, 1] of the feature-tree coefficient mass kept by the
    /// filter (alg2, fixed-mode).
    #[arg(long)]
    pub threshold_c: Option<f64>,

    #[arg(long, default_value_t = 25)]
    pub max_iterations: usize,

    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Landmark exponent c in (0, 1); landmarks are ⌈n^c⌉ points.
    #[arg(long)]
    pub landmark_c: Option<f64>,

    #[arg(long)]
    pub density_normalize: bool,

    #[arg(long, default_value_t = 1e-6)]
    pub regularizer_epsilon: f64,

    #[arg(long, value_enum, default_value_t = MetricChoice::Cosine)]
    pub sample_metric: MetricChoice,

    #[arg(long, value_enum, default_value_t = MetricChoice::Cosine)]
    pub feature_metric: MetricChoice,

    /// Initial sample distances (with `--sample-metric provided`).
    #[arg(long)]
    pub sample_distances: Option<PathBuf>,

    /// Initial feature distances (with `--feature-metric provided`).
    #[arg(long)]
    pub feature_distances: Option<PathBuf>,

    /// Add per-iteration wall times to the history log. Off by default so
    /// that repeated runs produce identical files.
    #[arg(long)]
    pub record_timings: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenToyArgs {
    #[arg(long)]
    pub output_dir: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 0.1)]
    pub noise_sigma: f64,

    #[arg(long, default_value_t = 30)]
    pub embed_dim: usize,

    /// Users per (device, context) leaf category.
    #[arg(long, default_value_t = 8)]
    pub users_per_leaf: usize,

    /// Videos per subgenre.
    #[arg(long, default_value_t = 8)]
    pub videos_per_leaf: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalKnnArgs {
    /// Square distance matrix (CSV).
    #[arg(long)]
    pub distances: PathBuf,

    /// One class label per line, aligned with the matrix rows.
    #[arg(long)]
    pub labels: PathBuf,

    /// Comma-separated neighbourhood sizes; default 1, 3, …, 19.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,

    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,

    #[arg(long, default_value_t = 5)]
    pub trials: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalSparsityArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Newick tree over the rows.
    #[arg(long)]
    pub sample_tree: PathBuf,

    /// Newick tree over the columns.
    #[arg(long)]
    pub feature_tree: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// Data matrix to convert.
    #[arg(long, conflicts_with = "tree", required_unless_present = "tree")]
    pub input: Option<PathBuf>,

    #[arg(long, requires = "input")]
    pub header: bool,

    /// Newick tree whose leaf distance matrix is written.
    #[arg(long)]
    pub tree: Option<PathBuf>,

    /// Output file; a matrix goes to MatrixMarket when it ends in `.mtx`.
    #[arg(long)]
    pub output: PathBuf,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_CONVERGED };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
