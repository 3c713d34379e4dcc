//! `causemotion` command-line interface.
//!
//! Exit codes: 0 success, 1 validation or evaluation failure, 2 usage
//! error, 3 provider or transport error, 4 format error.

mod commands;
mod manifest;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use causemotion::Error;
use clap::{Parser, Subcommand};

use crate::settings::FileConfig;

/// An error carrying its own exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: String,
}

impl Exit {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Exit {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Exit::new(2, message)
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn library_code(e: &Error) -> u8 {
    match e {
        Error::Rejected { .. } | Error::DegenerateDuration { .. } => 1,
        Error::Argument(_) | Error::UndefinedSimilarity | Error::PrecedenceViolation { .. } => 2,
        Error::Transport { .. } | Error::Provider { .. } | Error::ProviderResponse { .. } => 3,
        Error::Indexing { source, .. } | Error::PairScoring { source, .. } => library_code(source),
        Error::Parse { .. }
        | Error::Schema { .. }
        | Error::Fusion(_)
        | Error::DimensionMismatch { .. }
        | Error::Format(_)
        | Error::VersionMismatch { .. }
        | Error::Checksum { .. }
        | Error::Io(_) => 4,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(x) = cause.downcast_ref::<Exit>() {
            return x.code;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return library_code(e);
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == std::io::ErrorKind::NotFound {
                2
            } else {
                4
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 4;
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(
    name = "causemotion",
    version,
    about = "Emotional-causality extraction and causal chain evaluation for long dialogues"
)]
struct Cli {
    /// Worker threads for per-stage parallelism (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML or JSON file of option defaults; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check dialogue files against the schema and print the report
    Validate(commands::ValidateArgs),
    /// Build a knowledge base of fused window embeddings
    Index(commands::IndexArgs),
    /// Print the windows most similar to one indexed window
    Retrieve(commands::RetrieveArgs),
    /// Extract sextuplets with retrieved context
    Extract(commands::ExtractArgs),
    /// Build the weighted causal graph over extracted sextuplets
    Graph(commands::GraphArgs),
    /// Score a predicted graph and sextuplets against gold annotations
    Eval(commands::EvalArgs),
    /// Generate a synthetic dialogue with a planted causal chain
    Gen(commands::GenArgs),
    /// Run every stage and write all artifacts plus a manifest
    Run(Box<commands::RunArgs>),
}

fn configure_jobs(jobs: Option<usize>) -> Result<()> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err(Exit::usage("--jobs must be at least 1").into());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Exit::usage(e.to_string()))?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_jobs(cli.jobs)?;
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Index(a) => commands::index(&file, a),
        Command::Retrieve(a) => commands::retrieve_cmd(&file, a),
        Command::Extract(a) => commands::extract(&file, a),
        Command::Graph(a) => commands::graph(&file, a),
        Command::Eval(a) => commands::eval(&file, a),
        Command::Gen(a) => commands::gen(a),
        Command::Run(a) => commands::run(&file, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
