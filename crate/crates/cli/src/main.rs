use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mixcert_cli::commands::{
    cmd_bound, cmd_certify, cmd_experiment, cmd_segment, cmd_solve, CommandOutcome,
};
use mixcert_cli::config::RunConfig;
use mixcert_cli::output::{sha256_hex, RunWriter};
use mixcert_core::error::{Error, Result};

/// Certified K-component mixture fitting over discrete candidate sets.
#[derive(Parser)]
#[command(name = "mixcert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Certified convex upper bound on the best K-mixture log-likelihood.
    Bound,
    /// Lower bound by projected EM multistart, optionally brute force.
    Solve,
    /// Both bounds plus a checked optimality certificate.
    Certify,
    /// A configured study: tightness, separation, or restarts.
    Experiment,
    /// Certified image segmentation with a cluster mask.
    Segment,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Bound => "bound",
            Command::Solve => "solve",
            Command::Certify => "certify",
            Command::Experiment => "experiment",
            Command::Segment => "segment",
        }
    }
}

fn run(cli: &Cli) -> Result<CommandOutcome> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool setup failed: {e}")))?;
    }
    let Some(config_path) = &cli.config else {
        return Err(Error::InvalidArgument("--config <path> is required".into()));
    };
    let bytes = fs::read(config_path)?;
    let config_hash = sha256_hex(&bytes);
    let dir = config_path.parent().unwrap_or(Path::new("."));
    let config = RunConfig::from_json(&bytes, dir)?;
    let mut writer = RunWriter::create(&cli.out)?;
    let outcome = match cli.command {
        Command::Bound => cmd_bound(&config, &mut writer)?,
        Command::Solve => cmd_solve(&config, &mut writer)?,
        Command::Certify => cmd_certify(&config, &config_hash, &mut writer)?,
        Command::Experiment => cmd_experiment(&config, &mut writer)?,
        Command::Segment => cmd_segment(&config, &config_hash, &mut writer)?,
    };
    writer.finish(cli.command.name(), &config_hash)?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(CommandOutcome { converged: true }) => ExitCode::SUCCESS,
        Ok(CommandOutcome { converged: false }) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
