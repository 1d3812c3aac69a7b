mod commands;
mod config;

use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use reliablocks_core::avs::Strategy;

/// Exit codes: 0 ok, 1 I/O, 2 usage, 3 feed validation, 4 domain error.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
    pub fn domain(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser)]
#[command(name = "reliablocks", version, about = "Reliability scores for non-finalized optimistic-rollup blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fast-exit feed (JSON lines).
    Gen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        blocks: Option<u64>,
        #[arg(long = "exit-rate")]
        exit_rate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "RELIABLOCKS_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Validate a feed, write it to a fresh log and snapshot the result.
    Replay {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, env = "RELIABLOCKS_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print one block's score payload as JSON.
    Score {
        #[arg(long)]
        block: u64,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, env = "RELIABLOCKS_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Run operator rounds over evenly spaced blocks; results as JSONL.
    Simulate {
        #[arg(long, default_value_t = 4)]
        operators: usize,
        #[arg(long, default_value_t = 0)]
        byzantine: usize,
        /// honest | silent | offset:<delta> | random:<seed>
        #[arg(long, default_value = "offset:10")]
        strategy: Strategy,
        #[arg(long, default_value_t = 10)]
        tasks: u64,
        #[arg(long, env = "RELIABLOCKS_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Write every block's score and interest rate as CSV.
    Export {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, env = "RELIABLOCKS_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Serve the HTTP API over the replayed state.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, env = "RELIABLOCKS_CONFIG")]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen { seed, blocks, exit_rate, out, config } => {
            commands::gen(config.as_deref(), seed, blocks, exit_rate, &out)
        }
        Command::Replay { events, config, log } => commands::replay(config.as_deref(), log.as_deref(), &events),
        Command::Score { block, log, config } => commands::score(config.as_deref(), log.as_deref(), block),
        Command::Simulate { operators, byzantine, strategy, tasks, config } => {
            commands::simulate(config.as_deref(), operators, byzantine, strategy, tasks)
        }
        Command::Export { log, out, format: Format::Csv, config } => {
            commands::export_csv(config.as_deref(), log.as_deref(), &out)
        }
        Command::Serve { addr, log, config } => commands::serve(config.as_deref(), log.as_deref(), addr),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reliablocks: {e}");
            ExitCode::from(e.code)
        }
    }
}
