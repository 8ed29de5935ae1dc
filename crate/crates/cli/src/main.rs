//! `rewardlab`: score transcripts, run evaluations, serve the HTTP API, render
//! prompt templates and inspect corpora.
//!
//! Exit codes: 0 on success, 1 on runtime or input validation errors, 2 on
//! usage errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rewardlab_core::composer::Stage;
use rewardlab_core::templates::TemplateId;

#[derive(Debug, Parser)]
#[command(
    name = "rewardlab",
    version,
    about = "Reward engineering lab for search agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score an episode file.
    Score(ScoreArgs),
    /// Run a policy over a QA dataset against the simulated tools.
    Evaluate(EvaluateArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Prompt templates.
    #[command(subcommand)]
    Template(TemplateCommand),
    /// Document corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Episode file, one JSON record per line.
    #[arg(long, value_parser = existing_file)]
    episodes: PathBuf,
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    /// Reward config (TOML).
    #[arg(long, value_parser = existing_file)]
    config: Option<PathBuf>,
    /// Write records here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("policy_source").required(true).args(["policy", "script"])))]
struct EvaluateArgs {
    #[arg(long, value_parser = existing_file)]
    dataset: PathBuf,
    #[arg(long, value_parser = existing_file)]
    corpus: PathBuf,
    /// Policy endpoint URL.
    #[arg(long)]
    policy: Option<String>,
    /// Scripted turns per question id, one JSON record per line.
    #[arg(long, value_parser = existing_file)]
    script: Option<PathBuf>,
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    #[arg(long)]
    seed: u64,
    /// Probability that a tool call fails.
    #[arg(long, default_value_t = 0.0, value_parser = parse_probability)]
    fault_prob: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    #[arg(long, value_parser = existing_file)]
    config: Option<PathBuf>,
    /// Per-episode breakdown records.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full episode results including transcripts.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    max_turns: u32,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    max_tool_calls: u32,
    #[arg(long, default_value_t = 256 * 1024, value_parser = clap::value_parser!(u64).range(1..))]
    max_bytes: u64,
    /// Seconds to wait for each policy reply.
    #[arg(long, default_value_t = 60)]
    policy_timeout: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, value_parser = existing_file)]
    corpus: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    #[arg(long, default_value_t = 0.0, value_parser = parse_probability)]
    fault_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = existing_file)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum TemplateCommand {
    /// Render a template for an episode context (JSON).
    Render {
        #[arg(long, value_parser = parse_template)]
        id: TemplateId,
        #[arg(long, value_parser = existing_file)]
        context: PathBuf,
    },
    /// List templates with their recorded observations.
    List,
}

#[derive(Debug, Subcommand)]
enum CorpusCommand {
    /// Build the index and optionally print statistics.
    Index {
        #[arg(long = "in", value_parser = existing_file)]
        input: PathBuf,
        #[arg(long)]
        stats: bool,
    },
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file: {s}"))
    }
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse::<u8>()
        .map_err(|e| e.to_string())
        .and_then(Stage::try_from)
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1]"))
    }
}

fn parse_template(s: &str) -> Result<TemplateId, String> {
    s.parse()
        .map_err(|e: rewardlab_core::templates::UnknownTemplate| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();

    let result = match cli.command {
        Command::Score(a) => commands::score(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Serve(a) => commands::serve(a),
        Command::Template(TemplateCommand::Render { id, context }) => {
            commands::render_template(id, &context)
        }
        Command::Template(TemplateCommand::List) => commands::list_templates(),
        Command::Corpus(CorpusCommand::Index { input, stats }) => {
            commands::index_corpus(&input, stats)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
