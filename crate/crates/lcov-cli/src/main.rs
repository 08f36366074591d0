//! `lcov` — train filter banks, extract and edit local covariance maps, and
//! synthesize images from them.
//!
//! Every subcommand echoes its effective configuration as `config key=value`
//! lines (so runs are reproducible from the log alone) and finishes with a
//! single machine-parseable `summary key=value ...` line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

#[derive(Parser)]
#[command(name = "lcov", version, about = "Local covariance image representations")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each value may also come from the
/// config file under the same (kebab-case) key; an explicit flag wins.
#[derive(Args)]
struct Common {
    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// RNG seed for anything stochastic in the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Make outputs byte-reproducible for a fixed seed (e.g. wall-clock
    /// fields in logs are zeroed).
    #[arg(long, global = true)]
    deterministic: bool,

    /// Upper bound on worker threads (defaults to $LCOV_THREADS, then 1).
    /// Computation is deterministic regardless of the bound.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Local correlation diagnostics for a filter pair, with spectrally
    /// matched noise and phase-randomized filter controls.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Learn a filter bank by stochastic gradient descent on an ensemble.
    Train(commands::train::TrainArgs),
    /// Extract a local covariance map from an image under a bank.
    CovmapExtract(commands::covmap_extract::CovmapExtractArgs),
    /// Apply an eigenvalue manipulation to a stored covariance map.
    CovmapEdit(commands::covmap_edit::CovmapEditArgs),
    /// Synthesize an image matching a target covariance map.
    Synthesize(commands::synthesize::SynthesizeArgs),
    /// White-noise corruption of a reference at a prescribed relative error.
    Baseline(commands::baseline::BaselineArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => commands::analyze::run(&cli.common, args),
        Command::Train(args) => commands::train::run(&cli.common, args),
        Command::CovmapExtract(args) => commands::covmap_extract::run(&cli.common, args),
        Command::CovmapEdit(args) => commands::covmap_edit::run(&cli.common, args),
        Command::Synthesize(args) => commands::synthesize::run(&cli.common, args),
        Command::Baseline(args) => commands::baseline::run(&cli.common, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
