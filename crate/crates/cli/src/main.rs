use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Exit codes: 2 for bad input or config, 3 for provider failure.
pub const EXIT_BAD_INPUT: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;

#[derive(Parser)]
#[command(name = "fskt", version, about = "Few-shot knowledge tracing engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset, validate it, and print its statistics.
    Ingest(IngestArgs),
    /// Run a prompt-chain experiment and write a results directory.
    Run(RunArgs),
    /// Evaluate a classical baseline on the same protocol.
    Baseline(BaselineArgs),
    /// Compare results directories in a ranked table.
    Report(ReportArgs),
    /// List the available shot-selection strategies.
    Strategies,
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset path (response matrix for frcsub, JSONL log otherwise).
    #[arg(long)]
    dataset: PathBuf,
    /// Q-matrix path (frcsub format only).
    #[arg(long)]
    q_matrix: Option<PathBuf>,
    #[arg(long, value_parser = ["frcsub", "log"])]
    format: String,
}

#[derive(Args, Clone)]
struct ProtocolArgs {
    /// Config file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    q_matrix: Option<PathBuf>,
    #[arg(long, value_parser = ["frcsub", "log"])]
    format: Option<String>,
    #[arg(long, value_parser = ["scant", "sparse", "moderate"])]
    mode: Option<String>,
    /// Shot selection strategy.
    #[arg(long, value_parser = ["first", "random"])]
    select: Option<String>,
    /// Number of shots per student.
    #[arg(long)]
    shots: Option<usize>,
    /// Students sampled per repeat.
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Held-out fraction of each history.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Output directory for results.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long, value_parser = ["http", "mock", "oracle"])]
    provider: Option<String>,
    /// Model identifier sent to HTTP providers.
    #[arg(long)]
    model: Option<String>,
    /// Request an explanation for every prediction (one extra call each).
    #[arg(long)]
    explain: bool,
    /// Replay transcripts from an existing results directory; no provider
    /// calls are made and a cache miss is an error.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Directory with prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Cap total tokens spent by the provider.
    #[arg(long)]
    budget_tokens: Option<u64>,
    /// Embed at most this many recent shots in each prompt.
    #[arg(long)]
    max_context_shots: Option<usize>,
    /// Bound on concurrent provider requests.
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long, value_parser = ["bkt", "bkt-shots", "majority"])]
    method: String,
    /// Results directory of the run to compare against; seeds must match.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Two or more results directories.
    dirs: Vec<PathBuf>,
    /// Write the comparison table to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Run(args) => commands::run(args),
        Command::Baseline(args) => commands::baseline(args),
        Command::Report(args) => commands::report(args),
        Command::Strategies => commands::strategies(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
