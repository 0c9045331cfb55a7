mod commands;
mod config;
mod fail;
mod output;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::load;
use crate::fail::{CmdResult, Failure};

/// Sparse autoencoder training and analysis.
///
/// Exit codes: 0 success, 2 config or validation error, 3 numerical failure,
/// 4 I/O error.
#[derive(Debug, Parser)]
#[command(name = "saelab", version)]
struct Cli {
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one SAE.
    Train { config: PathBuf },
    /// Train one SAE per grid point.
    Sweep { config: PathBuf },
    /// Reconstruction and sparsity metrics of a checkpoint on datasets.
    Eval { config: PathBuf },
    /// Linear probes on raw or SAE features, evaluated across domains.
    Probe { config: PathBuf },
    /// Ontology alignment of SAE features against a class hierarchy.
    Ontology { config: PathBuf },
    /// Top-fraction feature overlap of two activation files.
    Overlap { config: PathBuf },
    /// Export unit decoder directions for steering.
    SteerExport { config: PathBuf },
    /// Print the header and label summary of an activation file.
    DatasetInfo { path: PathBuf },
    /// Generate a synthetic activation file.
    Synth(synth::SynthArgs),
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::config("--threads must be ≥ 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(e.to_string()))?;
    }
    let (seed, out) = (cli.seed, cli.out);
    match cli.command {
        Command::Train { config } => commands::train_cmd(load(&config, seed, out)?),
        Command::Sweep { config } => commands::sweep_cmd(load(&config, seed, out)?),
        Command::Eval { config } => commands::eval_cmd(load(&config, seed, out)?),
        Command::Probe { config } => commands::probe_cmd(load(&config, seed, out)?),
        Command::Ontology { config } => commands::ontology_cmd(load(&config, seed, out)?),
        Command::Overlap { config } => commands::overlap_cmd(load(&config, seed, out)?),
        Command::SteerExport { config } => commands::steer_export_cmd(load(&config, seed, out)?),
        Command::DatasetInfo { path } => commands::dataset_info_cmd(&path, out.as_deref()),
        Command::Synth(args) => synth::synth_cmd(&args, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("saelab: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
