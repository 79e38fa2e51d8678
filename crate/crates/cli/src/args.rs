//! Command-line surface.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "rfembed",
    version,
    about = "Supervised embeddings from random-forest proximities, with autoencoder extension to unseen points"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a forest and export its training proximities.
    Fit(FitArgs),
    /// Compute the reference embedding of a fitted forest.
    Embed(EmbedArgs),
    /// Train an autoencoder variant against a reference embedding.
    TrainAe(TrainAeArgs),
    /// Embed new, unlabeled points through a trained model.
    Extend(ExtendArgs),
    /// Run the full architecture-comparison grid from a config file.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct CommonIo {
    /// Directory for output artifacts.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Optional JSON config supplying defaults (flags win).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the label column.
    #[arg(long)]
    pub label: String,
    /// Number of trees.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trees: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub mtry: Option<usize>,
    /// Self-similarity mode for the proximity export: zero | passdown.
    #[arg(long, default_value = "zero")]
    pub self_sim: String,
    #[command(flatten)]
    pub io: CommonIo,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Forest file produced by `fit`.
    #[arg(long)]
    pub forest: PathBuf,
    /// Embedding dimension.
    #[arg(long)]
    pub k: Option<usize>,
    /// Diffusion time: a positive integer or `auto`.
    #[arg(long)]
    pub t: Option<String>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub mds_iters: Option<usize>,
    #[arg(long)]
    pub mds_tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub io: CommonIo,
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub label: String,
    #[arg(long)]
    pub forest: PathBuf,
    /// Reference embedding CSV produced by `embed`.
    #[arg(long)]
    pub embedding: PathBuf,
    /// Architecture: rf-grae | rf-prox-in | rf-prox-reg | rf-prn | rf-prn-pro.
    #[arg(long)]
    pub variant: String,
    /// Geometric regularization weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Proximity-head weight (rf-prox-reg only).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Prototype fraction (rf-prn-pro only).
    #[arg(long)]
    pub proto_frac: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Comma-separated hidden widths, e.g. 800,400,100.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the raw reference embedding in the geometric term instead of
    /// the per-dimension standardized one.
    #[arg(long)]
    pub raw_g: bool,
    #[arg(long, default_value = "zero")]
    pub self_sim: String,
    #[command(flatten)]
    pub io: CommonIo,
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Forest file the model was trained against.
    #[arg(long)]
    pub forest: PathBuf,
    /// CSV of new points; only the model's feature columns are read, so a
    /// label column may be present or absent.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub io: CommonIo,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Experiment configuration (datasets, variants, grids).
    #[arg(long)]
    pub config: PathBuf,
    /// Concurrent cell groups; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Print the cell plan without running it.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}
