//! `toast`: analyze, prune and evaluate ViT checkpoints stored as TOAST1
//! archives.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input, 3 shape or
//! config mismatch.

// `!(x >= 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod error;
mod files;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{analyze, eval, flops, policy, prune, report, synth, Globals};

#[derive(Debug, Parser)]
#[command(name = "toast", version, about = "ViT compression toolkit")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Per-layer detail on standard error.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Analyze(analyze::AnalyzeArgs),
    Prune(prune::PruneArgs),
    Flops(flops::FlopsArgs),
    Eval(eval::EvalArgs),
    Report(report::ReportArgs),
    Synth(synth::SynthArgs),
    Policy(policy::PolicyArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let g = Globals {
        seed: cli.seed,
        verbose: cli.verbose,
    };
    let result = match &cli.command {
        Command::Analyze(a) => analyze::run(a, g),
        Command::Prune(a) => prune::run(a, g),
        Command::Flops(a) => flops::run(a, g),
        Command::Eval(a) => eval::run(a, g),
        Command::Report(a) => report::run(a, g),
        Command::Synth(a) => synth::run(a, g),
        Command::Policy(a) => policy::run(a, g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
