use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afc_macsim::experiment::{parse_config, run_experiment, ExperimentConfig};
use clap::{Parser, Subcommand};

/// Runs desk-scale experiments for probabilistic rateless multiple access.
#[derive(Debug, Parser)]
#[command(name = "afc-macsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config and write its CSV.
    Run {
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for trial-level parallelism.
        #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
        threads: Option<u16>,
        /// Directory receiving the CSV.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(config: &Path, seed: Option<u64>, threads: Option<u16>, out: &Path) -> Result<(), String> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        pool = pool.num_threads(t.into());
    }
    let pool = pool.build().map_err(|e| format!("thread pool: {e}"))?;
    let output = pool.install(|| run_experiment(&cfg)).map_err(|e| e.to_string())?;
    for line in &output.summary {
        println!("{} {line}", cfg.experiment.name());
    }
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let path = out.join(cfg.output_name());
    output.write_atomic(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, seed, threads, out } => run(config, *seed, *threads, out),
        Command::Validate { config } => load(config).map(|cfg| {
            println!("{}: ok ({}, seed {}, {} trials)", config.display(), cfg.experiment.name(), cfg.seed, cfg.trials);
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
