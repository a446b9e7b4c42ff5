mod backend;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rnr_core::docmodel::Cl100kCounter;

use crate::backend::Backends;
use crate::config::{BackendSection, ExperimentConfig, Overrides};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "rnr", version, about = "Long-context QA experiments: build corpora, run methods, report scores")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build sample files from the configured passage pools.
    Build(Common),
    /// Run the configured methods, resuming from existing traces.
    Run(Common),
    /// Write score, chunk, position and cost tables from traces.
    Report(Common),
    /// Compare single-page retrieval with direct answering.
    Probe(Common),
    /// Run with the positional-bias simulator regardless of the configured backend.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Attention window in tokens.
        #[arg(long, default_value_t = 5_000)]
        window: usize,
    },
}

/// Flags shared by every subcommand. Each one overrides the config key of the
/// same name.
#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Document lengths in tokens, comma separated.
    #[arg(long = "d", value_delimiter = ',')]
    d_values: Vec<usize>,
    #[arg(long)]
    position_step: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Store full prompts in traces.
    #[arg(long)]
    record_prompts: bool,
    /// Methods to run with default settings, comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Only these datasets, comma separated.
    #[arg(long, value_delimiter = ',')]
    datasets: Vec<String>,
}

impl Common {
    fn load(&self, backend: Option<BackendSection>) -> Result<ExperimentConfig, CliError> {
        let overrides = Overrides {
            output_dir: self.output_dir.clone(),
            d_values: self.d_values.clone(),
            position_step: self.position_step,
            parallelism: self.parallelism,
            seed: self.seed,
            record_prompts: self.record_prompts,
            methods: self.methods.clone(),
            datasets: self.datasets.clone(),
            backend,
        };
        ExperimentConfig::load(&self.config, &overrides)
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    let counter = Cl100kCounter::shared();
    match command {
        Command::Build(common) => {
            let config = common.load(None)?;
            let backends = || Backends::new(&config.backend, counter.clone());
            commands::build(&config, &backends, counter.as_ref())?;
        }
        Command::Run(common) => {
            let config = common.load(None)?;
            let backends = Backends::new(&config.backend, counter.clone())?;
            commands::run(&config, &backends, counter.as_ref())?;
        }
        Command::Simulate { common, window } => {
            let config = common.load(Some(BackendSection::simulator(window)))?;
            let backends = Backends::new(&config.backend, counter.clone())?;
            commands::run(&config, &backends, counter.as_ref())?;
        }
        Command::Report(common) => {
            let config = common.load(None)?;
            let manifest = commands::report(&config)?;
            println!("manifest: {}", manifest.display());
        }
        Command::Probe(common) => {
            let config = common.load(None)?;
            let backends = Backends::new(&config.backend, counter.clone())?;
            let manifest = commands::probe(&config, &backends, counter.as_ref())?;
            println!("manifest: {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}
