use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use saelab::store::{write_dataset, DatasetMeta};
use saelab::synthetic::{self, DictionaryConfig, OntologyBenchConfig};

use crate::fail::{CmdResult, Failure};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Standard normal rows.
    Gaussian,
    /// Sparse nonnegative combinations of unit atoms.
    Dictionary,
    /// Labeled dictionary data with a matching class hierarchy.
    Ontology,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    /// Activation file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    rows: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Dictionary size (dictionary only).
    #[arg(long, default_value_t = 64)]
    atoms: usize,
    /// Atoms per row (dictionary only).
    #[arg(long, default_value_t = 3)]
    active: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the ground-truth atoms as an activation file.
    #[arg(long)]
    atoms_out: Option<PathBuf>,
    /// Hierarchy JSON to write (ontology only).
    #[arg(long)]
    hierarchy_out: Option<PathBuf>,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn synth_cmd(a: &SynthArgs, seed_override: Option<u64>) -> CmdResult {
    let seed = seed_override.unwrap_or(a.seed);
    let (data, notes) = match a.kind {
        SynthKind::Gaussian => {
            let x = synthetic::gaussian(a.rows, a.dim, seed);
            write_dataset(
                x.view(),
                None,
                &DatasetMeta::synthetic(format!("gaussian seed={seed}")),
                &a.out,
            )?;
            return Ok(());
        }
        SynthKind::Dictionary => {
            let cfg = DictionaryConfig {
                rows: a.rows,
                d: a.dim,
                n_atoms: a.atoms,
                active: a.active,
                seed,
                ..Default::default()
            };
            let notes = format!("dictionary atoms={} active={} seed={seed}", a.atoms, a.active);
            (synthetic::sparse_dictionary(&cfg)?, notes)
        }
        SynthKind::Ontology => {
            let cfg = OntologyBenchConfig {
                rows: a.rows,
                d: a.dim,
                seed,
                ..Default::default()
            };
            if let Some(h) = &a.hierarchy_out {
                write_json(h, &synthetic::benchmark_hierarchy(&cfg))?;
            }
            (
                synthetic::ontology_benchmark(&cfg)?,
                format!("ontology benchmark seed={seed}"),
            )
        }
    };
    data.to_dataset(&notes)?.write(&a.out)?;
    if let Some(p) = &a.atoms_out {
        write_dataset(
            data.atoms.view(),
            None,
            &DatasetMeta::synthetic("ground-truth atoms"),
            p,
        )?;
    }
    Ok(())
}
