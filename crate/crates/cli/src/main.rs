//! `hsnn`: data generation, training, evaluation, accumulator simulation
//! and cost profiling for hybrid spiking networks.

mod data;
mod failure;
mod manifest;
mod profile;
mod simulate;
mod train;

use clap::{Parser, Subcommand};

use failure::CmdResult;

#[derive(Parser, Debug)]
#[command(name = "hsnn", version, about = "Hybrid spiking network toolkit")]
struct Cli {
    /// Worker threads for data-parallel work (defaults to all cores).
    #[arg(long, global = true, env = "HSNN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic direction-reversal gesture dataset as event files.
    GenData(data::GenDataArgs),
    /// Train a model on a dataset directory.
    Train(train::TrainArgs),
    /// Score a checkpoint on a dataset directory.
    Eval(train::EvalArgs),
    /// Run the counter-bank simulator against the software accumulator.
    SimulateHw(simulate::SimulateArgs),
    /// Estimate latency, power and energy per model and interval.
    Profile(profile::ProfileArgs),
}

/// Parses `C,H,W,T`.
pub fn parse_shape(s: &str) -> Result<[usize; 4], String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("`{d}`: {e}")))
        .collect::<Result<_, _>>()?;
    dims.try_into().map_err(|d: Vec<usize>| format!("shape needs 4 dims (C,H,W,T), got {}", d.len()))
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| failure::Failure::usage(e.to_string()))?;
    }
    match cli.command {
        Command::GenData(a) => data::gen_data(a),
        Command::Train(a) => train::train_cmd(a),
        Command::Eval(a) => train::eval_cmd(a),
        Command::SimulateHw(a) => simulate::simulate_cmd(a),
        Command::Profile(a) => profile::profile_cmd(a),
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            std::process::ExitCode::from(f.code as u8)
        }
    }
}
