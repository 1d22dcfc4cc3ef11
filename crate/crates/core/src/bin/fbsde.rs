use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fbsde_core::runner::{run, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Solve,
    Simulate,
    Verify,
    All,
}

/// Decoupling-field solver and verification harness for the utility FBSDE.
#[derive(Parser, Debug)]
#[command(name = "fbsde", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; outputs do not depend on this value.
    #[arg(long, env = "FBSDE_WORKERS")]
    workers: Option<usize>,
    /// Output directory (overrides the configuration's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Solve => Command::Solve,
        Cmd::Simulate => Command::Simulate,
        Cmd::Verify => Command::Verify,
        Cmd::All => Command::All,
    };
    let code = run(command, &cli.config, cli.workers, cli.out);
    ExitCode::from(code as u8)
}
