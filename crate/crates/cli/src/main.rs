mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dbdn::Variant;

use crate::settings::UsageError;

#[derive(Parser, Debug)]
#[command(name = "dbdn", version, about = "Deep bi-dense networks for single-image super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on a prepared (or raw HR) image directory.
    Train(TrainArgs),
    /// Y-channel PSNR/SSIM of a checkpoint or the bicubic baseline.
    Eval(EvalArgs),
    /// Upscale one image with a checkpoint.
    Sr(SrArgs),
    /// Print the parameter count with a per-subnetwork breakdown.
    CountParams(CountArgs),
    /// Finite-difference gradient checks for every op and a tiny network.
    GradCheck(GradCheckArgs),
    /// Crop HR images and write bicubic LR caches plus an index.
    PrepareData(PrepareArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Feature width n_r.
    #[arg(long)]
    pub nr: Option<usize>,
    /// Growth rate n_g; defaults to n_r.
    #[arg(long)]
    pub ng: Option<usize>,
    /// Also feed L0 into every block's concatenation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub l0_every_block: Option<bool>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prepared dataset directory, or a directory of HR images.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// HR patch side.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub halve_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    /// Continue from this checkpoint and its optimizer sidecar.
    #[arg(long)]
    pub resume: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "baseline")]
    pub checkpoint: Option<String>,
    #[arg(long, value_parser = ["bicubic"])]
    pub baseline: Option<String>,
    /// Prepared dataset directory, or a directory of HR images.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Directory for the report, resolved config and triptychs.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub triptych: Option<bool>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
}

#[derive(Args, Debug)]
pub struct SrArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run a single check, e.g. conv2d_transpose or network.
    #[arg(long)]
    pub op: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hr_dir: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Comma-separated, e.g. 2,3,4.
    #[arg(long)]
    pub scales: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sr(a) => commands::sr(a),
        Command::CountParams(a) => commands::count_params(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::PrepareData(a) => commands::prepare_data(a),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
