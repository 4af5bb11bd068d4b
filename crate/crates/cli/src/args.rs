use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppsync_core::Override;

#[derive(Debug, Parser)]
#[command(name = "ppsync", version, about = "Prescribed-performance synchronization simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write its trajectory and report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Outputs to write.
        #[arg(long, value_enum, value_delimiter = ',', default_values = ["trajectories", "report"])]
        emit: Vec<Emit>,
    },
    /// Run the sign-switched and erf-smoothed transforms side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, value_delimiter = ',', default_values = ["report"])]
        emit: Vec<Emit>,
    },
    /// Report the stability gain conditions without simulating.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate from the scenario's initial state plus seeded perturbations of it.
    PhasePlane {
        #[command(flatten)]
        common: Common,
        /// Number of perturbed initial conditions in addition to the nominal one.
        #[arg(long, default_value_t = 4)]
        perturbations: usize,
        /// Perturbations are uniform in [-scale, scale] per state entry.
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        #[arg(long, default_value_t = 1)]
        perturbation_seed: u64,
    },
    /// Write the effective scenario as TOML (to stdout unless --out is given).
    DumpScenario {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Builtin name (example1, example2) or path to a scenario file.
    #[arg(long)]
    pub scenario: String,
    /// Override a scenario key, e.g. `--set gains.c=50` or `--set transform.variant=sign_switched`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub set: Vec<Override>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the random scenario constants.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Trajectories,
    Report,
    PhasePlane,
    PlotScript,
}

fn parse_override(s: &str) -> Result<Override, String> {
    s.parse().map_err(|e: ppsync_core::ConfigError| e.to_string())
}
