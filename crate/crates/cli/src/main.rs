//! `ctc`: run configurations for the dissipative XYZ cluster engine.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numerical
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ctc", version, about = "Mean-field dynamics, stability and rigidity of a dissipative XYZ spin lattice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and write it in long CSV format.
    Trajectory(Common),
    /// Staged noise protocol and relative crystalline fractions.
    NoiseRigidity(Common),
    /// Classify every point of a two-coupling grid.
    PhaseDiagram(SweepArgs),
    /// Leading Jacobian eigenvalues along one coupling, with sign changes.
    StabilityScan(Common),
    /// Largest Lyapunov exponent by threshold resets.
    Lyapunov(Common),
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "CTC_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Args, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Continue from the checkpoint in the output directory (the default
    /// when one exists).
    #[arg(long, conflicts_with = "restart")]
    pub resume: bool,
    /// Discard any existing checkpoint and start over.
    #[arg(long)]
    pub restart: bool,
    /// Stop after this many chunks, leaving the checkpoint in place.
    #[arg(long, hide = true)]
    pub max_chunks: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Trajectory(c) => commands::trajectory(c),
        Command::NoiseRigidity(c) => commands::noise_rigidity(c),
        Command::PhaseDiagram(a) => commands::phase_diagram(a),
        Command::StabilityScan(c) => commands::stability_scan(c),
        Command::Lyapunov(c) => commands::lyapunov(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
