//! `spde-mlmc <rates|mlmc|reference|compare|coupling-demo> --config <path>`

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use spde_mlmc::harness::{run_command, ExperimentConfig, Mode, Scale};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Rates,
    Mlmc,
    Reference,
    Compare,
    CouplingDemo,
}

impl From<Command> for Mode {
    fn from(c: Command) -> Self {
        match c {
            Command::Rates => Mode::Rates,
            Command::Mlmc => Mode::Mlmc,
            Command::Reference => Mode::Reference,
            Command::Compare => Mode::Compare,
            Command::CouplingDemo => Mode::CouplingDemo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Debug, Parser)]
#[command(version, about = "Spectral-Galerkin MLMC experiments for SPDE with additive colored noise")]
struct Cli {
    command: Command,
    /// TOML experiment config (may name a preset to layer over).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> spde_mlmc::Result<String> {
    let mut config = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(scale) = cli.scale {
        config.scale = match scale {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        };
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(spde_mlmc::Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| spde_mlmc::Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    run_command(cli.command.into(), &config)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
