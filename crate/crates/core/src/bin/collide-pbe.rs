//! Command-line solver for particle coagulation with collisional breakage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use collide_pbe::error::Error;
use collide_pbe::runner::{self, Command, RunOptions};

#[derive(Parser)]
#[command(
    name = "collide-pbe",
    version,
    about = "Sectional solver for particle coagulation with collisional breakage"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Integrate the configured model and write moments, snapshots and a report.
    Simulate(CommonArgs),
    /// Run the sampled assumption audit for the configured model.
    Audit(CommonArgs),
    /// Truncation self-convergence study over converge.n_values.
    Converge(CommonArgs),
    /// Benchmark the constant-kernel case against its closed-form solution.
    Oracle(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for operator evaluation (or COLLIDE_PBE_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        CliCommand::Simulate(a) => (Command::Simulate, a),
        CliCommand::Audit(a) => (Command::Audit, a),
        CliCommand::Converge(a) => (Command::Converge, a),
        CliCommand::Oracle(a) => (Command::Oracle, a),
    };
    let opts = RunOptions {
        command,
        config: args.config,
        out_dir: args.out,
        threads: args.threads,
    };
    match runner::execute(&opts) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => {
            eprintln!("collide-pbe: run aborted; partial outputs preserved");
            ExitCode::from(code as u8)
        }
        Err(err @ Error::Config(_)) => {
            eprintln!("collide-pbe: {err}");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("collide-pbe: {err}");
            ExitCode::from(1)
        }
    }
}
