mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spatiospatial::models::ArchitectureKind;

#[derive(Debug, Parser)]
#[command(name = "ssnet", version, about = "Volumetric residual classifiers for brain MRI")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the seeded synthetic dataset.
    Synth(SynthArgs),
    /// Resample and intensity-normalize every volume of a manifest.
    Preprocess(PreprocessArgs),
    /// Write stratified train/test splits.
    Split(SplitArgs),
    /// Train one model on one split and score it on the held-out part.
    Train(RunArgs),
    /// Repeated stratified train/test cross-validation.
    Crossval(RunArgs),
    /// Score a checkpoint on a manifest or on one split's test part.
    Eval(EvalArgs),
    /// Classify a single volume.
    Predict(PredictArgs),
    /// Print the trainable parameter count of an architecture.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub extent: usize,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Isotropic target spacing in mm.
    #[arg(long, default_value_t = 2.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lo: f64,
    #[arg(long, default_value_t = 99.5)]
    pub hi: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.7)]
    pub ratio: f64,
}

/// Overrides applied on top of the `--config` file.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<ArchitectureKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
    /// Keep the momentum running statistics instead of re-estimating them
    /// over the training set after the last epoch.
    #[arg(long)]
    pub no_bn_recalibration: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Split file written by `split`; otherwise splits are drawn from the seed.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    /// Which split `train` uses.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Initialize from a checkpoint, reinitializing the `--skip` modules.
    #[arg(long)]
    pub from_checkpoint: Option<PathBuf>,
    /// Comma-separated module prefixes left untouched by `--from-checkpoint`.
    #[arg(long, value_delimiter = ',')]
    pub skip: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub volume: PathBuf,
    /// Expected architecture; must match the checkpoint.
    #[arg(long)]
    pub arch: Option<ArchitectureKind>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub arch: ArchitectureKind,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 1)]
    pub in_channels: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::OK as u8 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code(&err) as u8)
        }
    }
}
