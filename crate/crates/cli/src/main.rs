mod commands;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

/// Installs Python repositories with an LLM agent and benchmarks the result.
#[derive(Debug, Parser)]
#[command(name = "installamatic", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the agent once on a repository directory or a manifest entry.
    Install(InstallArgs),
    /// Run every selected manifest entry repeatedly and aggregate metrics.
    Benchmark(BenchmarkArgs),
    /// Check a manifest, optionally building each ground-truth Dockerfile.
    Validate(ValidateArgs),
    /// Aggregate metrics from persisted run reports.
    Metrics(MetricsArgs),
    /// Print a persisted transcript in readable form.
    ShowTranscript(ShowTranscriptArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Openai,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineKind {
    Docker,
    Shell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Standard,
    PerfectRecall,
}

#[derive(Debug, Clone, Args)]
pub struct ManifestArgs {
    /// Dataset manifest; the bundled dataset when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkout cache for manifest entries.
    #[arg(long, default_value = ".installamatic")]
    work: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long, value_enum, default_value_t = EngineKind::Docker)]
    engine: EngineKind,
    /// Docker-compatible CLI to drive.
    #[arg(long, default_value = "docker")]
    docker_bin: PathBuf,
    /// Comma-separated base images the shell engine accepts (any when omitted).
    #[arg(long)]
    shell_images: Option<String>,
    /// Build time limit in seconds.
    #[arg(long, default_value_t = 1800)]
    time_limit: u64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Openai)]
    backend: BackendKind,
    /// Script for the scripted backend: a JSON file, or a directory holding
    /// `<repo>.json` per repository.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    /// Client-side request cap per minute.
    #[arg(long)]
    rpm: Option<u32>,
    #[arg(long, value_enum, default_value_t = ModeArg::Standard)]
    mode: ModeArg,
    /// Tool-call budget per search stage.
    #[arg(long, default_value_t = 30)]
    budget: usize,
    #[arg(long, default_value_t = 2)]
    max_repairs: usize,
    /// Prompt set (TOML); the built-in set when omitted.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Output root; every invocation writes a fresh run-stamped directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct InstallArgs {
    /// Repository directory, or the name of a manifest entry.
    repo: String,
    /// Relevant documents for a directory target (comma-separated).
    #[arg(long)]
    docs: Option<String>,
    #[command(flatten)]
    manifest: ManifestArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Entry names (comma-separated) or `*`.
    #[arg(long, default_value = "*")]
    select: String,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Repositories processed concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[command(flatten)]
    manifest: ManifestArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    build_ground_truth: bool,
    #[command(flatten)]
    manifest: ManifestArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Directory searched recursively for `report.json` files.
    reports: PathBuf,
    #[command(flatten)]
    manifest: ManifestArgs,
    /// Write summary files here instead of only printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShowTranscriptArgs {
    file: PathBuf,
}

/// Failures that end a command, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infrastructure failure: {0}")]
    Infra(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Infra(_) => 3,
        }
    }
}

/// Status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
    Aborted,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Install(a) => commands::install(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Validate(a) => commands::validate(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::ShowTranscript(a) => commands::show_transcript(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Ok(Status::Aborted) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
