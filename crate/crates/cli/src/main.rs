//! `ddrci`: generate data, synthesize RCI sets, verify them and render
//! reports.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or config
//! error, 3 synthesis infeasible.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{AlgorithmArg, LmiArg};

#[derive(Parser)]
#[command(name = "ddrci", version, about = "Data-driven RCI sets from one noisy trajectory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Run configuration (JSON); defaults describe the double integrator.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Overrides `RCI_SEED` and the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured system and write a trajectory CSV.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Compute an RCI set and gain from trajectory data.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV; generated from the config when absent.
        #[arg(long, short)]
        data: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        #[arg(long, value_enum)]
        lmi: Option<LmiArg>,
        /// Outer iterations of the iterative scheme.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Check a solution file; exits 1 when any check fails.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        solution: Option<PathBuf>,
        #[arg(long, short)]
        data: Option<PathBuf>,
        /// Report file (JSON); printed to stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Plot solutions with closed-loop rollouts and tabulate volumes.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        solutions: Vec<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Volume table; defaults to the plot path with a `.csv` extension.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Rollout length per vertex.
        #[arg(long, default_value_t = 30)]
        steps: usize,
    },
    /// Synthesize for several template complexities in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub const VERIFY: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const INFEASIBLE: u8 = 3;

    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: Self::USAGE, msg: msg.into() }
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Self { code: Self::INFEASIBLE, msg: msg.into() }
    }

    pub fn verify(msg: impl Into<String>) -> Self {
        Self { code: Self::VERIFY, msg: msg.into() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common, out } => commands::generate(&common, out),
        Command::Synthesize { common, data, out, algorithm, lmi, iters } => {
            commands::synthesize(&common, data, out, algorithm, lmi, iters)
        }
        Command::Verify { common, solution, data, out } => commands::verify(&common, solution, data, out),
        Command::Report { common, solutions, plot, csv, steps } => {
            commands::report(&common, &solutions, plot, csv, steps)
        }
        Command::Sweep { common, data, out_dir } => commands::sweep(&common, data, out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
