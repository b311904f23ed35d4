use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "hosp", version, about = "Few-shot learning with a high-order edge graph network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a Gaussian-cluster embedding file.
    Synth(SynthArgs),
    /// Train a model; writes checkpoint, metrics CSV, summary JSON and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on fresh episodes.
    Eval(EvalArgs),
    /// Train and test one model per value of an ablation axis.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub classes: u64,
    #[arg(long = "per-class", value_parser = clap::value_parser!(u64).range(1..))]
    pub per_class: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    /// Class means lie on a sphere of radius `sep * noise`.
    #[arg(long)]
    pub sep: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// First class id, so separately generated splits stay disjoint.
    #[arg(long = "class-offset", default_value_t = 0)]
    pub class_offset: i64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricInputArg {
    Distance,
    AbsDiff,
}

/// Config file plus per-field overrides; flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with `TrainConfig` keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "n-way")]
    pub n_way: Option<usize>,
    #[arg(long = "k-shot")]
    pub k_shot: Option<usize>,
    /// Queries per class.
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `full` or a combination of `h`, `s`, `d`.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long = "label-fraction")]
    pub label_fraction: Option<f64>,
    /// `similarity`, `high_order` or `dissimilarity`.
    #[arg(long)]
    pub readout: Option<String>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long = "weight-decay")]
    pub weight_decay: Option<f64>,
    /// Episodes per optimizer step.
    #[arg(long = "batch")]
    pub episodes_per_batch: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "eval-every")]
    pub eval_every: Option<usize>,
    #[arg(long = "eval-episodes")]
    pub eval_episodes: Option<usize>,
    #[arg(long = "test-episodes")]
    pub test_episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `f32` or `f64`.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long = "hidden-dim")]
    pub hidden_dim: Option<usize>,
    #[arg(long = "metric-hidden")]
    pub metric_hidden: Option<usize>,
    #[arg(long = "metric-input", value_enum)]
    pub metric_input: Option<MetricInputArg>,
    #[arg(long)]
    pub encoder: Option<bool>,
    #[arg(long)]
    pub standardize: Option<bool>,
    #[arg(long = "self-feature")]
    pub self_feature: Option<bool>,
    #[arg(long = "leaky-slope")]
    pub leaky_slope: Option<f64>,
    /// Stop once validation accuracy reaches this value.
    #[arg(long = "target-val-acc")]
    pub target_val_acc: Option<f64>,
    /// Worker threads; 1 keeps runs bit-reproducible across machines.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Held-out split for the summary's test accuracy.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub episodes: usize,
    /// Defaults to the seed stored in the checkpoint.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Also write the result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// `variant`, `layers`, `lambda` or `label_fraction`.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values; defaults to the axis's standard sweep.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<String>,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}
