use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod error;
mod io;

use error::CliError;

#[derive(Parser)]
#[command(name = "flexclear", version, about = "Local flexibility market clearing: continuous vs auction")]
struct Cli {
    /// Upper bound on worker threads for scenario and oracle runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Continuous,
    Auction,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SenseArg {
    Min,
    Max,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a 33-bus case-study instance.
    Generate {
        /// TOML case configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clear one instance with the continuous engine or the auction.
    Clear {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        instance: PathBuf,
        /// JSON array of bid/block ids giving the arrival order (continuous mode).
        #[arg(long)]
        sequence: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run random arrival scenarios on the four cases and compare with the auction.
    Compare {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 100)]
        scenarios: u64,
        /// Scenario seed; falls back to FLEXCLEAR_SEED, then 42.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Worst and best arrival sequence welfare of a small instance.
    Bounds {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = SenseArg::Both)]
        sense: SenseArg,
        /// Also enumerate every offer order.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    match cli.command {
        Command::Generate { config, out } => commands::generate(config.as_deref(), &out),
        Command::Clear {
            mode,
            instance,
            sequence,
            out,
        } => commands::clear(mode, &instance, sequence.as_deref(), &out),
        Command::Compare {
            instance,
            scenarios,
            seed,
            out,
        } => commands::compare(&instance, scenarios, seed, &out),
        Command::Bounds {
            instance,
            sense,
            oracle,
            out,
        } => commands::bounds(&instance, sense, oracle, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
