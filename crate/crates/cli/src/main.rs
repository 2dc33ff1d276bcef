mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusionsort::network::{Ablation, Modality};
use fusionsort::Error;

/// RGB/hyperspectral fusion segmentation toolkit.
#[derive(Debug, Parser)]
#[command(name = "fusionsort", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reduce a cube to three PCA channels and stack them with an RGB image.
    Fuse(FuseArgs),
    /// Compare analytic and finite-difference gradients of every block.
    Gradcheck(GradcheckArgs),
    /// Train on a generated toy dataset and save a checkpoint.
    TrainToy(TrainArgs),
    /// Run a checkpoint on images and score the predictions.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    rgb: PathBuf,
    /// Fused 6-band cube.
    #[arg(long)]
    out: PathBuf,
    /// Variance retained and the leading eigenvalues.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Accepted for a uniform interface; fusion draws no random numbers.
    #[arg(long, default_value_t = 0)]
    #[allow(dead_code)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Corrupt the backward rule of this op (harness self-test).
    #[arg(long)]
    sabotage: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    images: usize,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all", value_parser = parse_ablation)]
    ablation: Ablation,
    #[arg(long, default_value = "fused", value_parser = parse_modality)]
    modality: Modality,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Side length of the square toy images.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 9)]
    bands: usize,
    /// Per-step loss, one value per line.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Also write the generated images as `NNN.cube`, `NNN.ppm` and `NNN.pgm`.
    #[arg(long)]
    dump_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    cube: Vec<PathBuf>,
    #[arg(long)]
    rgb: Vec<PathBuf>,
    /// Ground-truth masks, one per image.
    #[arg(long)]
    mask: Vec<PathBuf>,
    /// Predicted mask paths, one per image.
    #[arg(long)]
    out: Vec<PathBuf>,
    /// Comma-separated report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Score the ground truth against itself instead of running the network.
    #[arg(long)]
    self_check: bool,
    /// Required checkpoint ablation.
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Required checkpoint class count.
    #[arg(long)]
    classes: Option<usize>,
    /// Required checkpoint modality.
    #[arg(long, value_parser = parse_modality)]
    modality: Option<Modality>,
    /// Accepted for a uniform interface; evaluation draws no random numbers.
    #[arg(long, default_value_t = 0)]
    #[allow(dead_code)]
    seed: u64,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Shape(_)
        | Error::Format { .. }
        | Error::Data(_)
        | Error::Label(_)
        | Error::Mismatch(_)
        | Error::Io(_) => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Fuse(a) => commands::fuse(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
