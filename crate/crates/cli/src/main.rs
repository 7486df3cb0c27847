//! Config-driven batch runner for alpha profiles, homogenized Hamiltonians,
//! generating-family spectra, the property battery, and route cross-checks.
//!
//! Exit codes: 0 on success, 2 when the check battery records failures,
//! 1 on configuration or runtime errors.

mod config;
mod scenarios;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scenarios::{Flags, Scenario};

#[derive(Parser)]
#[command(name = "qmlab", version, about = "Quasi-state and homogenization laboratory on T*Tⁿ")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Alpha profile α_H(a) over a grid of cohomology classes
    Alpha(RunArgs),
    /// Homogenized Hamiltonian H̄(p) over a momentum grid
    Homogenize(RunArgs),
    /// Spectral invariants and persistence diagram of one generating family
    GfqiSpectra(RunArgs),
    /// Built-in property battery (exit 2 when any record fails)
    Check(RunArgs),
    /// Variational route vs loop-family route on the same system
    CrossCheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the run configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Cap the worker thread count
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed for randomized multistarts (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Multiply every battery tolerance by this factor
    #[arg(long)]
    tolerance_scale: Option<f64>,
}

impl RunArgs {
    fn into_flags(self) -> Flags {
        Flags {
            config: self.config,
            out: self.out,
            jobs: self.jobs,
            seed: self.seed,
            tolerance_scale: self.tolerance_scale,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (scenario, args) = match cli.cmd {
        Cmd::Alpha(a) => (Scenario::Alpha, a),
        Cmd::Homogenize(a) => (Scenario::Homogenize, a),
        Cmd::GfqiSpectra(a) => (Scenario::GfqiSpectra, a),
        Cmd::Check(a) => (Scenario::Check, a),
        Cmd::CrossCheck(a) => (Scenario::CrossCheck, a),
    };
    match scenarios::run(scenario, &args.into_flags()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
