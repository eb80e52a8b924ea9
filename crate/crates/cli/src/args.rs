use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "simpnet", version, about = "Train, evaluate, audit and gradient-check SimpNet-style CNNs on the CPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write a metrics CSV and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Print the parameter ledger and the design audit of an architecture.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of every layer's backward pass.
    Gradcheck(GradcheckArgs),
    /// Train every arm of an experiment preset over several seeds and compare.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ArchArgs {
    /// Architecture file in the text DSL.
    #[arg(long, value_name = "FILE")]
    pub arch: Option<PathBuf>,
    /// Bundled preset, e.g. `simpnet-tiny` or `maxpool-vs-sconv/sconv`.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "mnist")]
    pub dataset: DatasetKind,
    /// Directory holding the raw dataset files.
    #[arg(long, env = "SIMPNET_DATA_DIR", value_name = "PATH")]
    pub data_dir: PathBuf,
    /// Keep only the first N examples.
    #[arg(long, value_name = "N")]
    pub subset: Option<usize>,
    /// Skip per-channel standardization with training-split statistics.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 10, value_name = "N")]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05, value_name = "R")]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9, value_name = "R")]
    pub momentum: f64,
    /// L2 weight decay.
    #[arg(long, default_value_t = 5e-4, value_name = "R")]
    pub wd: f64,
    #[arg(long, default_value_t = 128, value_name = "N")]
    pub batch_size: usize,
    #[arg(long, default_value_t = 500, value_name = "N")]
    pub eval_batch_size: usize,
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub seed: u64,
    /// Zero the wall-clock column so reruns are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
    /// Random crop after padding; horizontal mirroring on CIFAR-10 only.
    #[arg(long)]
    pub augment: bool,
    /// Stop after this many optimizer steps.
    #[arg(long, value_name = "N")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value = "metrics.csv", value_name = "FILE")]
    pub out_metrics: PathBuf,
    #[arg(long, default_value = "model.ckpt", value_name = "FILE")]
    pub out_ckpt: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 500, value_name = "N")]
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Records,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Audit as if fed images of this shape instead of the declared input.
    #[arg(long, num_args = 3, value_names = ["C", "H", "W"])]
    pub input: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub seed: u64,
    /// Check a single layer kind.
    #[arg(long, value_name = "NAME")]
    pub layer: Option<String>,
    #[arg(long, default_value_t = 20, value_name = "N")]
    pub instances: usize,
    /// Test fixture: corrupt this kind's backward pass.
    #[arg(long, hide = true, value_name = "NAME")]
    pub inject_broken_layer: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "NAME")]
    pub preset: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Runs per arm, seeded from --seed upward.
    #[arg(long, default_value_t = 3, value_name = "N")]
    pub seeds: u64,
    /// Largest relative parameter gap between arms of one budget.
    #[arg(long, default_value_t = 0.02, value_name = "R")]
    pub tolerance: f64,
    /// Test images fed to the activation probe.
    #[arg(long, default_value_t = 256, value_name = "N")]
    pub probe_size: usize,
    /// Per-run records; defaults to `ablate-<preset>.tsv`.
    #[arg(long, value_name = "FILE")]
    pub out_records: Option<PathBuf>,
}
