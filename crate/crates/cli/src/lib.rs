//! Command-line front end: `solve`, `oracle` and `bench` over the built-in
//! problems, with every artifact hashed into `run_manifest.json`.
//!
//! Configuration precedence, lowest first: built-in defaults, the JSON file
//! given by `--config`, `VOLTERRA_SEED` (only when the file sets no seed),
//! the `--quick` preset, explicit flags.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod problems;

use clap::{Parser, Subcommand};

pub use commands::{cmd_bench, cmd_oracle, cmd_solve, BenchRow, OracleRow, SolveOutcome};
pub use config::{resolve, ProblemId, RunArgs, RunConfig, SEED_ENV};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bsvie", version, about = "Deep backward solver and regression oracle for backward stochastic Volterra integral equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on one problem and write the solution, metrics and plot data.
    Solve(RunArgs),
    /// Run the regression oracle over a list of step counts.
    Oracle(RunArgs),
    /// Solve both closed-form examples and tabulate L2 errors.
    Bench(RunArgs),
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (args, name) = match &cli.command {
        Command::Solve(a) => (a, "solve"),
        Command::Oracle(a) => (a, "oracle"),
        Command::Bench(a) => (a, "bench"),
    };
    let result = resolve(args, std::env::var(SEED_ENV).ok().as_deref()).and_then(|cfg| {
        commands::with_threads(cfg.threads, || match &cli.command {
            Command::Solve(_) => cmd_solve(&cfg).map(|o| {
                if let Some(r) = o.report {
                    println!("e_y={:.16e} er_y={:?} e_z={:.16e} er_z={:?}", r.e_y, r.er_y, r.e_z, r.er_z);
                }
            }),
            Command::Oracle(_) => cmd_oracle(&cfg).map(|rows| {
                for r in rows {
                    println!("N={} dt={:.16e} err_y={:.16e} err_z={:.16e}", r.n_steps, r.dt, r.err_y, r.err_z);
                }
            }),
            Command::Bench(_) => cmd_bench(&cfg).map(drop),
        })?
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("bsvie {name}: {e}");
            e.exit_code()
        }
    }
}
