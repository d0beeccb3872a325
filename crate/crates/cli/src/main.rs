//! `cascade-lab`: experiment configs in, CSV/JSON artifacts out.
//!
//! Every subcommand can read its options from `--config FILE` (JSON with the
//! same field names as the flags) and echoes the fully resolved options into
//! its output, so an echoed config re-runs to identical artifacts.

mod commands;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    BoundsArgs, CriticalQArgs, ExactMomentsArgs, OracleCheckArgs, ReduceArgs, SimulateArgs,
    ThetaMomentsArgs, VerifyArgs,
};
use output::CliError;

#[derive(Parser)]
#[command(name = "cascade-lab", version, about = "Moment growth experiments for multiplicative cascades")]
struct Cli {
    /// Worker thread cap. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Structure function on a grid and the critical exponent search.
    CriticalQ(CriticalQArgs),
    /// Integer moments of the normalized cascade by exact recursion (CSV).
    ExactMoments(ExactMomentsArgs),
    /// Integer moments of a weighted tree sum (JSON).
    ThetaMoments(ThetaMomentsArgs),
    /// Monte Carlo estimates of real moments (CSV).
    Simulate(SimulateArgs),
    /// One-step reduction of a weights file, or the iterated pipeline on a
    /// cascade profile (JSON).
    Reduce(ReduceArgs),
    /// Depth-sum lower bound and κ upper sum (JSON).
    Bounds(BoundsArgs),
    /// Runs a verification bundle; exits 1 if any verdict fails.
    VerifyTheorems(VerifyArgs),
    /// Cross-checks exact recursion, enumeration and the martingale
    /// identities on one small instance.
    OracleCheck(OracleCheckArgs),
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Pass,
    Fail(String),
}

fn run(cli: Cli) -> Result<Status, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::CriticalQ(a) => commands::critical_q(a),
        Command::ExactMoments(a) => commands::exact_moments(a),
        Command::ThetaMoments(a) => commands::theta_moments(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Reduce(a) => commands::reduce(a),
        Command::Bounds(a) => commands::bounds(a),
        Command::VerifyTheorems(a) => commands::verify_theorems(a),
        Command::OracleCheck(a) => commands::oracle_check(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail(msg)) => {
            eprintln!("FAIL: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
