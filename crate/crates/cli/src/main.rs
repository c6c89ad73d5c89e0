//! Command-line front end: validate and solve problem documents, audit state
//! mechanisms against the information they leak, and run the repeated and
//! dynamic simulators.
//!
//! Exit codes: 0 success (clean audit), 1 audit violations found, 2 input
//! error, 3 numerical failure.

mod output;
mod run;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "calmech", version, about = "Calibrated mechanism design toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a problem document and pretty-print its contents.
    Validate {
        /// Problem-spec JSON file.
        problem: PathBuf,
    },
    /// Solve the two-stage design problem: value curve, concavification at
    /// the prior, belief split, and per-atom mechanisms.
    Solve {
        problem: PathBuf,
        /// Belief-grid size for binary-state problems.
        #[arg(long, default_value_t = 601)]
        grid: usize,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Extract a mechanism's calibrated information structure and audit its
    /// IC/IR constraints signal by signal.
    Audit {
        problem: PathBuf,
        /// State-mechanism JSON file.
        mechanism: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate repeated or dynamic play of a mechanism.
    Simulate {
        problem: PathBuf,
        /// A state-mechanism file, or a two-stage file produced by `solve`.
        mechanism: PathBuf,
        /// Simulation mode.
        #[arg(long, value_parser = ["repeated", "dynamic"])]
        mode: String,
        /// Number of periods.
        #[arg(long, default_value_t = 100_000)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Agent policy: truthful | myopic | learning:N | deviator.
        #[arg(long, default_value = "truthful")]
        policy: String,
        /// Two-stage reference file for the occupation comparison.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { problem } => run::validate(&problem),
        Command::Solve { problem, grid, out } => run::solve(&problem, grid, &out),
        Command::Audit {
            problem,
            mechanism,
            out,
        } => run::audit(&problem, &mechanism, &out),
        Command::Simulate {
            problem,
            mechanism,
            mode,
            horizon,
            seed,
            policy,
            reference,
            out,
        } => run::simulate(
            &problem,
            &mechanism,
            &mode,
            horizon,
            seed,
            &policy,
            reference.as_deref(),
            &out,
        ),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("calmech: {e}");
            e.exit_code()
        }
    }
}
