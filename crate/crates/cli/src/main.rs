//! `fabcap`: train, evaluate and compare capacity-planning policies on a
//! simulated wafer fab.

mod common;
mod compare;
mod generate;
mod plots;
mod simulate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "fabcap", version, about = "Wafer-fab capacity planning with reinforcement learning")]
struct Cli {
    /// Default output root when a command has no --out.
    #[arg(long, global = true, env = "FABCAP_OUT", default_value = "runs")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy with n-step PPO.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint over shared-seed instances.
    Evaluate(compare::EvaluateArgs),
    /// Compare strategies head to head over shared-seed instances.
    Compare(compare::CompareArgs),
    /// Run the simulator without actions and report KPIs.
    Simulate(simulate::SimulateArgs),
    /// Write a synthetic scenario file.
    GenerateScenario(generate::GenerateArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Train(a) => train::run(a, &cli.out_root, &argv),
        Command::Evaluate(a) => compare::run_evaluate(a, &cli.out_root, &argv),
        Command::Compare(a) => compare::run_compare(a, &cli.out_root, &argv),
        Command::Simulate(a) => simulate::run(a, &cli.out_root, &argv),
        Command::GenerateScenario(a) => generate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
