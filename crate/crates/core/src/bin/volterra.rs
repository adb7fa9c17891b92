//! Batch CLI for the SVIE toolkit.
//!
//! Every subcommand takes the same flags; the named subcommands additionally
//! require the config's task id to match. `VOLTERRA_SEED` overrides the
//! config seed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use volterra_control::runner::{run, RunOptions};

#[derive(Parser)]
#[command(name = "volterra", version, about = "Stochastic Volterra control toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (wall-clock only; results are identical for any K).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever task the config declares.
    Run(CommonArgs),
    /// Performance estimate of a control.
    Simulate(CommonArgs),
    /// Triangular resolvent table.
    Resolvent(CommonArgs),
    /// Full optimal-consumption pipeline.
    Demo(CommonArgs),
    /// Gateaux derivatives along bump perturbations.
    Perturb(CommonArgs),
    /// Duality / Clark-Ocone oracle suite.
    Check(CommonArgs),
    /// Certify a candidate control.
    Certify(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, expected_task) = match cli.command {
        Command::Run(a) => (a, None),
        Command::Simulate(a) => (a, Some("simulate")),
        Command::Resolvent(a) => (a, Some("resolvent")),
        Command::Demo(a) => (a, Some("demo")),
        Command::Perturb(a) => (a, Some("perturb")),
        Command::Check(a) => (a, Some("check")),
        Command::Certify(a) => (a, Some("certify")),
    };
    let code = run(&RunOptions {
        config_path: args.config,
        workers: args.workers,
        out_dir: args.out,
        expected_task: expected_task.map(str::to_string),
    });
    ExitCode::from(code as u8)
}
