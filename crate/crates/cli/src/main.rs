//! `botnet`: degree model, equilibria, optimal patching and agent-based runs
//! as data files.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use botnet_core::optimizer::SweepAxis;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{ExperimentConfig, MethodChoice};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "botnet", version, about = "Malware spread and degree-aware patching on D2D networks")]
struct Cli {
    /// JSON configuration file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepChoice {
    GammaB,
    GammaC,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Degree distribution, optionally with a sampled or ingested graph.
    Network {
        /// Location CSV (`x,y` in km or `lon,lat`).
        #[arg(long)]
        ingest: Option<PathBuf>,
        /// Communication range for ingested locations, km.
        #[arg(long)]
        range: Option<f64>,
        /// Also sample a PPP graph over the simulation region.
        #[arg(long)]
        sample_graph: bool,
    },
    /// Equilibrium tables over a grid of uniform patching rates.
    Equilibrium {
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
        /// `start:stop:points`.
        #[arg(long)]
        mu_grid: Option<String>,
    },
    /// Optimal patching policy, or a cost sweep.
    Optimize {
        #[arg(long, value_enum)]
        sweep: Option<SweepChoice>,
    },
    /// Two-phase agent-based experiment.
    Simulate {
        /// Location CSV to simulate on instead of a PPP graph.
        #[arg(long)]
        locations: Option<PathBuf>,
        #[arg(long)]
        range: Option<f64>,
    },
}

fn parse_grid(text: &str, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
    let bad = || CliError::Config(format!("--mu-grid expects start:stop:points, got `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    cfg.equilibrium.mu_start = parts[0].parse().map_err(|_| bad())?;
    cfg.equilibrium.mu_stop = parts[1].parse().map_err(|_| bad())?;
    cfg.equilibrium.mu_points = parts[2].parse().map_err(|_| bad())?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    let mut sample_graph = false;
    let mut sweep = None;
    match &cli.command {
        Command::Network {
            ingest,
            range,
            sample_graph: sample,
        } => {
            if ingest.is_some() {
                cfg.locations.path = ingest.clone();
            }
            if let Some(r) = range {
                cfg.locations.range = *r;
            }
            sample_graph = *sample;
        }
        Command::Equilibrium { method, mu_grid } => {
            if let Some(m) = method {
                cfg.equilibrium.method = *m;
            }
            if let Some(grid) = mu_grid {
                parse_grid(grid, &mut cfg)?;
            }
        }
        Command::Optimize { sweep: choice } => {
            sweep = choice.map(|c| match c {
                SweepChoice::GammaB => SweepAxis::GammaB,
                SweepChoice::GammaC => SweepAxis::GammaC,
            });
        }
        Command::Simulate { locations, range } => {
            if locations.is_some() {
                cfg.locations.path = locations.clone();
            }
            if let Some(r) = range {
                cfg.locations.range = *r;
            }
        }
    }
    cfg.resolve();
    cfg.validate()?;
    match cli.command {
        Command::Network { .. } => commands::network(&cfg, sample_graph),
        Command::Equilibrium { .. } => commands::equilibrium(&cfg),
        Command::Optimize { .. } => commands::optimize(&cfg, sweep),
        Command::Simulate { .. } => commands::simulate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("botnet: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
