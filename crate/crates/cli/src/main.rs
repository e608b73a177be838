//! `eeginterp`: synthetic data, training, attribution, evaluation,
//! rendering and reports from the command line.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, unknown method or model
//! names), 2 data or validation error (unreadable or corrupt files, shape
//! mismatches, numerical failures).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<eeginterp::Error> for CliError {
    fn from(e: eeginterp::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eeginterp", version, about = "Attribution and interpretability metrics for compact EEG CNNs")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset (alpha spindles vs EMG bursts).
    Synth(SynthArgs),
    /// Train a model and write weights plus a training history.
    Train(TrainArgs),
    /// Compute contribution maps for selected samples.
    Attribute(AttributeArgs),
    /// Sensitivity and deletion metrics per sample, plus a summary table.
    Evaluate(EvaluateArgs),
    /// SVG sample views and scalp maps.
    Render(RenderArgs),
    /// Per-sample text reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 11)]
    subjects: usize,
    #[arg(long, default_value_t = 50)]
    samples_per_class: usize,
    #[arg(long, default_value_t = eeginterp::synth::DEFAULT_LENGTH)]
    length: usize,
    /// Multiplies every class feature amplitude; 0 gives indistinguishable
    /// classes.
    #[arg(long, default_value_t = 1.0)]
    feature_scale: f64,
}

/// Dataset, weights and which samples to use.
#[derive(Debug, Args)]
struct Source {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Use only this subject's samples (batch statistics come from them too).
    #[arg(long)]
    subject: Option<u32>,
    /// Comma-separated sample ids within the selection.
    #[arg(long, value_delimiter = ',')]
    samples: Option<Vec<usize>>,
    /// Keep at most this many samples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Leave this subject out of training and report accuracy on it.
    #[arg(long)]
    holdout: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    class_weights: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct AttributeArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON-lines file with one record per (sample, method).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    sample_threshold: Option<f64>,
    #[arg(long)]
    channel_threshold: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long)]
    sample_threshold: Option<f64>,
    #[arg(long)]
    channel_threshold: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&cfg, &a),
        Command::Attribute(a) => commands::attribute(&cfg, &a),
        Command::Evaluate(a) => commands::evaluate(&cfg, &a),
        Command::Render(a) => commands::render(&cfg, &a),
        Command::Report(a) => commands::report(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
