//! `langid`: synthesize a toy corpus, split it, extract MFCC caches, train,
//! evaluate and render reports.
//!
//! Exit codes: 0 on success, 1 on runtime or I/O failure, 2 on usage errors
//! and label-set mismatches.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad flags or configuration. Reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "langid", version, about = "Spoken language identification pipeline")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-class corpus with a manifest.
    Synth(SynthArgs),
    /// Assign train/val/test splits per (label, gender) group.
    Split(SplitArgs),
    /// Compute MFCC feature caches for every manifest entry.
    Extract(ExtractArgs),
    /// Train a classifier and write its checkpoint, labels and epoch log.
    Train(TrainArgs),
    /// Evaluate a trained model on one split of a manifest.
    Eval(EvalArgs),
    /// Render a saved evaluation or sweep report.
    Report(ReportArgs),
    /// Train and test one model per convolution kernel size.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of classes (2 to 16).
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Clips per class.
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 16000)]
    sr: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory; receives <label>/<index>.wav and manifest.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by the commands that read a run configuration. Each flag
/// overrides the corresponding value from `--config`.
#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest CSV (path,label,gender,split).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Feature cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    common: Common,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output manifest path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    /// Recompute caches that already exist.
    #[arg(long)]
    force: bool,
}

/// Model and recipe flags shared by `train` and `sweep`.
#[derive(Args, Debug, Default)]
pub struct Recipe {
    /// CNN, CRNN or CRNN_ATTN (dashes and lower case accepted).
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap each training class, e.g. manual:100.
    #[arg(long)]
    balance: Option<String>,
    /// Comma-separated label subset, e.g. as,bn,or.
    #[arg(long)]
    cluster: Option<String>,
    #[arg(long, value_enum)]
    padding: Option<PaddingArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    recipe: Recipe,
    /// Set every convolution kernel to this size.
    #[arg(long)]
    kernel: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    recipe: Recipe,
    /// Kernel sizes to visit.
    #[arg(long, value_delimiter = ',')]
    kernels: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Noise mixed into each clip before extraction, e.g. white:10.
    #[arg(long)]
    noise: Option<String>,
    /// Seed for the noise generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated label subset to evaluate.
    #[arg(long)]
    cluster: Option<String>,
    /// Report path (JSON). Defaults to a file inside the model directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report JSON written by `eval` or `sweep`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaddingArg {
    Valid,
    Same,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<langid::Error>() {
        Some(langid::Error::LabelMismatch(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
