//! Command-line orchestration for the occuhmm library.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use occuhmm_core::sim::SettingId;

use config::{OccupancyMethod, Overrides, RunConfig};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "occuhmm", version, about = "State occupancy estimation for covariate-driven HMMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Regularise, clean and segment a raw tracking file.
    Preprocess(RunArgs),
    /// Fit an HMM by maximum likelihood.
    Fit(RunArgs),
    /// Estimate the state occupancy curve of a fitted model.
    Occupancy(RunArgs),
    /// Run a simulation experiment.
    Simulate(RunArgs),
    /// Most likely state sequence of a fitted model.
    Decode(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<OccupancyMethod>,
    #[arg(long)]
    pub setting: Option<SettingId>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub strict: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let base = self.config.parent().unwrap_or(Path::new("."));
        let ov = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            method: self.method,
            setting: self.setting,
            replicates: self.replicates,
            strict: self.strict,
        };
        RunConfig::load(&self.config)?.resolve(base, &ov)
    }
}

/// Runs one command and returns its summary line.
pub fn run(command: &Command) -> CliResult<String> {
    let (args, f): (&RunArgs, fn(&RunConfig) -> CliResult<String>) = match command {
        Command::Preprocess(a) => (a, commands::preprocess),
        Command::Fit(a) => (a, commands::fit),
        Command::Occupancy(a) => (a, commands::occupancy),
        Command::Simulate(a) => (a, commands::simulate),
        Command::Decode(a) => (a, commands::decode),
    };
    let cfg = args.resolve()?;
    cfg.persist()?;
    f(&cfg)
}
