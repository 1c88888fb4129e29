//! `cte`: compress-then-explain command-line tool.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cte::bench::Estimator;
use cte::compress::Method;
use cte::models::Activation;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "CTE_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "cte", version, about = "Distribution compression for cheaper, more stable model explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a raw CSV 75:25 and fit preprocessing on the training part.
    Preprocess(PreprocessArgs),
    /// Train an MLP on a preprocessed CSV.
    Train(TrainArgs),
    /// Select a coreset of rows.
    Compress(CompressArgs),
    /// Distribution distances between a dataset and a coreset.
    Distance(DistanceArgs),
    /// Explain a model with a background sample.
    Explain(ExplainArgs),
    /// Run a benchmark suite from a spec file.
    Benchmark(BenchmarkArgs),
    /// Summarize benchmark output.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Label column, excluded from the features.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep features without standardizing them.
    #[arg(long)]
    no_standardize: bool,
    /// Keep constant columns.
    #[arg(long)]
    keep_degenerate: bool,
    /// Store categorical level indices instead of target encoding.
    #[arg(long)]
    no_target_encoding: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON training configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hidden layer widths, e.g. `32,16`.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_activation)]
    activation: Option<Activation>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output weight file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompressArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_method, default_value = "kt")]
    method: Method,
    /// Coreset size; defaults to the Compress++ output size.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian kernel bandwidth; defaults to `sqrt(2 d)`.
    #[arg(long)]
    sigma: Option<f64>,
    /// Compress++ oversampling parameter.
    #[arg(long, default_value_t = cte::compress::DEFAULT_OVERSAMPLE_G)]
    g: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DistanceArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Coreset selection JSON with row indices into `--data`.
    #[arg(long)]
    coreset: PathBuf,
    #[arg(long, default_value_t = cte::metrics::DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Coreset selection JSON (indices into `--data`) or a CSV of rows.
    #[arg(long)]
    background: PathBuf,
    #[arg(long, value_parser = parse_estimator)]
    estimator: Estimator,
    /// JSON explainer configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    npermutations: Option<usize>,
    #[arg(long)]
    nsamples: Option<usize>,
    #[arg(long)]
    n_steps: Option<usize>,
    /// Explain only the first `rows` rows of `--data`.
    #[arg(long)]
    rows: Option<usize>,
    /// Model output explained for classifiers.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// JSON artifact; a CSV with the same stem is written alongside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the spec repeat count.
    #[arg(long)]
    repeats: Option<usize>,
    /// Discard output from an earlier run instead of resuming.
    #[arg(long)]
    fresh: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    in_dir: PathBuf,
    /// Summary file; `.json` gives JSON, anything else a text table.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: cte::CteError| e.to_string())
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: cte::CteError| e.to_string())
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    match s {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(format!("unknown activation {s:?} (relu, tanh)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Compress(a) => commands::compress(a),
        Command::Distance(a) => commands::distance(a),
        Command::Explain(a) => commands::explain(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
