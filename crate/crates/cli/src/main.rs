//! `deephetero`: dataset building, training, evaluation, ablation and
//! gradient checks for the heterogeneous sensor classifier.
//!
//! Exit codes: 0 success, 2 usage, configuration, parse or validation
//! error, 3 non-finite training loss, 4 gradient check failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deephetero::Variant;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<deephetero::Error> for Failure {
    fn from(e: deephetero::Error) -> Self {
        let code = match e {
            deephetero::Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser, Debug)]
#[command(name = "deephetero", version, about = "Heterogeneous IoT sensor sequence classification")]
struct Cli {
    /// Root for default output directories.
    #[arg(long, global = true, env = "DEEPHETERO_OUT", default_value = "runs")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a dataset directory (CSV plus manifest) from a source.
    Ingest(IngestArgs),
    /// Train one model variant and evaluate it on the test split.
    Train(TrainArgs),
    /// Re-evaluate a finished training run.
    Evaluate(EvaluateArgs),
    /// Train every ablation variant on a shared split and tabulate them.
    Ablate(AblateArgs),
    /// Finite-difference gradient checks per layer kind.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").args(["synth", "iowa", "csv", "config"]).required(true)))]
pub struct IngestArgs {
    /// Generate the seeded synthetic benchmark.
    #[arg(long)]
    pub synth: bool,
    #[arg(long, requires = "synth")]
    pub classes: Option<usize>,
    #[arg(long, requires = "synth")]
    pub per_class: Option<usize>,
    #[arg(long, requires = "synth")]
    pub len: Option<usize>,
    #[arg(long, requires = "synth")]
    pub seed: Option<u64>,
    /// Build from raw IEM ASOS station files.
    #[arg(long, requires = "raw")]
    pub iowa: bool,
    /// Directory of raw ASOS CSV downloads.
    #[arg(long, requires = "iowa")]
    pub raw: Option<PathBuf>,
    /// Window length in hours.
    #[arg(long, requires = "iowa")]
    pub window: Option<usize>,
    #[arg(long, requires = "iowa")]
    pub max_missing: Option<f64>,
    /// Import a generic `id,label,v0,...` CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Cut ragged CSV rows to the shortest row.
    #[arg(long, requires = "csv")]
    pub truncate: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Resolved configuration of an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Options shared by `train` and `ablate`. Unset options keep the value
/// from `--config`, or the default.
#[derive(Args, Debug)]
pub struct TrainOptions {
    /// Dataset directory, manifest or CSV.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Seeds the split, the shuffles, the initialization and the
    /// augmentation streams.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Divide every layer width by this factor.
    #[arg(long)]
    pub scale: Option<usize>,
    /// Augmentation followed by B-SMOTE on the training split.
    #[arg(long)]
    pub swiss_preset: bool,
    /// Select checkpoints on the test split instead of a held-out fraction.
    #[arg(long, conflicts_with = "val_fraction")]
    pub validate_on_test: bool,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Impute from training-split statistics only.
    #[arg(long)]
    pub leak_free_impute: bool,
    /// Per-sequence z-score normalization.
    #[arg(long)]
    pub zscore: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub opts: TrainOptions,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Output directory of a `train` run.
    #[arg(long, required_unless_present = "config")]
    pub run: Option<PathBuf>,
    /// Evaluate all samples of this dataset instead of the run's test split.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Comma-separated subset of variants.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<Variant>,
    /// Dataset label for the table header.
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub opts: TrainOptions,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Layer kind to check; repeatable. Default: every kind.
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    /// Relative error tolerance (default 1e-4, 1e-3 for the model).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let root = cli.out_root;
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a, &root),
        Command::Train(a) => commands::train(a, &root),
        Command::Evaluate(a) => commands::evaluate(a, &root),
        Command::Ablate(a) => commands::ablate(a, &root),
        Command::Gradcheck(a) => commands::gradcheck(a, &root),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
