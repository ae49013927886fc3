//! Batch front end for the CardioLens pipeline.
//!
//! Exit codes are a stable contract: 0 success, 1 partial failure,
//! 2 usage/config error, 3 numerical divergence during training.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cardiolens", version, about = "Cardiomegaly detection pipeline: preprocessing, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Enhance a directory of radiographs and emit per-image quality reports
    Preprocess(PreprocessArgs),
    /// Train the classifier and write per-epoch metric curves
    Train(TrainArgs),
    /// Score a checkpoint (or an injected prediction set) against a manifest
    Evaluate(EvaluateArgs),
    /// Classify a single image
    Predict(PredictArgs),
}

#[derive(clap::Args)]
pub struct PreprocessArgs {
    /// UTF-8 `key = value` config file; flags win over file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of input images (PNG or PGM)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory for enhanced images, edge maps, and reports.csv
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    target_width: Option<usize>,
    #[arg(long)]
    target_height: Option<usize>,
    /// Laplacian sharpening strength
    #[arg(long)]
    sharpen_k: Option<f64>,
    /// Add the squared log-intensity statistic after sharpening
    #[arg(long)]
    apply_v_offset: Option<bool>,
    #[arg(long)]
    canny_low: Option<f64>,
    #[arg(long)]
    canny_high: Option<f64>,
    /// Erosion count for opening by reconstruction (0 skips morphology)
    #[arg(long)]
    reconstruction_n: Option<usize>,
}

#[derive(clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest CSV (`id,label` with Yes/No labels)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory containing the manifest's image files
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Train on a generated dataset of this many samples instead of files
    #[arg(long)]
    synthetic: Option<usize>,
    /// Output directory for curves.csv, checkpoints, and split manifests
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// sgd, momentum, rmsprop, or adam
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum_beta: Option<f64>,
    #[arg(long)]
    rms_avg: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Square model input size in pixels
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    /// Start from an existing checkpoint instead of fresh parameters
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    /// Comma-separated layer-name prefixes to exclude from updates,
    /// e.g. `stem,block,attn`
    #[arg(long)]
    freeze: Option<String>,
    /// Enable training-time augmentation
    #[arg(long)]
    augment: Option<bool>,
    /// Rotation range in degrees (plus/minus)
    #[arg(long)]
    augment_rotation: Option<f64>,
    /// Zoom half-range around 1.0
    #[arg(long)]
    augment_scale: Option<f64>,
    /// Gaussian pixel-noise standard deviation
    #[arg(long)]
    augment_noise: Option<f64>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
}

#[derive(clap::Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint to score
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// CSV of precomputed predictions (`id,pred,truth,score`), bypassing
    /// the model
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Where to write the metric report CSV
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct PredictArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Image to classify
    image: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Preprocess(args) => commands::preprocess::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Predict(args) => commands::predict::run(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
