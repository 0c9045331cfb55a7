//! Hyperparameter sweeps: one independent training run per grid point.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::csv_err;
use crate::sae::{write_checkpoint, SaeArchitecture, SaeKind, Sparsity};
use crate::store::ActivationDataset;
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    /// Used by the ReLU and Gated architectures.
    pub lambdas: Vec<f64>,
    /// Used by TopK.
    pub ks: Vec<usize>,
    pub expansions: Vec<usize>,
    pub architectures: Vec<SaeKind>,
    pub tie_gate_weights: bool,
    pub topk_use_bias: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            lambdas: vec![0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0],
            ks: vec![4, 8, 16, 32, 64, 128, 256],
            expansions: vec![8, 16, 32],
            architectures: vec![SaeKind::Relu, SaeKind::TopK, SaeKind::Gated],
            tie_gate_weights: false,
            topk_use_bias: false,
        }
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub arch: SaeArchitecture,
    pub expansion: usize,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.expansions.is_empty() || self.architectures.is_empty() {
            return Err(Error::invalid(
                "sweep grid needs at least one expansion and architecture",
            ));
        }
        if self.expansions.contains(&0) {
            return Err(Error::invalid("expansions must be positive"));
        }
        let uses_lambda = self.architectures.iter().any(|k| *k != SaeKind::TopK);
        let uses_k = self.architectures.contains(&SaeKind::TopK);
        if uses_lambda && self.lambdas.is_empty() {
            return Err(Error::invalid("λ grid is empty"));
        }
        if uses_lambda && self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("λ values must be positive and finite"));
        }
        if uses_k && (self.ks.is_empty() || self.ks.contains(&0)) {
            return Err(Error::invalid("k grid must be nonempty and positive"));
        }
        Ok(())
    }

    /// Grid points in a fixed order: architecture, then sparsity value, then
    /// expansion.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &kind in &self.architectures {
            let sparsities: Vec<Sparsity> = match kind {
                SaeKind::TopK => self.ks.iter().map(|&k| Sparsity::K(k)).collect(),
                _ => self.lambdas.iter().map(|&l| Sparsity::Lambda(l)).collect(),
            };
            for sparsity in sparsities {
                for &expansion in &self.expansions {
                    let arch = SaeArchitecture {
                        kind,
                        sparsity,
                        topk_use_bias: kind == SaeKind::TopK && self.topk_use_bias,
                        tie_gate_weights: kind == SaeKind::Gated && self.tie_gate_weights,
                    };
                    out.push(SweepPoint { arch, expansion });
                }
            }
        }
        out
    }
}

/// One row of the sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub arch: String,
    pub sparsity_kind: String,
    pub sparsity_value: f64,
    pub expansion: usize,
    pub seed: u64,
    pub final_val_mse: Option<f64>,
    pub final_val_l0: Option<f64>,
    pub final_val_l1: Option<f64>,
    pub dead_frac: Option<f64>,
    pub steps: Option<usize>,
    pub wall_s: Option<f64>,
    /// `ok` or the error message of a failed run.
    pub status: String,
    pub checkpoint_path: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Where a sweep run's checkpoint is written, relative to the sweep directory.
pub fn checkpoint_name(point: &SweepPoint) -> String {
    let sp = match point.arch.sparsity {
        Sparsity::Lambda(l) => format!("lambda{l}"),
        Sparsity::K(k) => format!("k{k}"),
    };
    format!("{}_{}_x{}.saeprm", point.arch.kind, sp, point.expansion)
}

/// Runs every grid point. Runs execute in parallel on the current rayon pool
/// but each is sequential and seeded identically, so rows do not depend on
/// scheduling. A failed run yields a row with its error in `status`.
pub fn sweep(
    dataset: &ActivationDataset,
    grid: &SweepGrid,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    cfg.validate()?;
    let points = grid.points();
    let rows = points
        .par_iter()
        .map(|pt| run_point(dataset, pt, cfg, checkpoint_dir))
        .collect();
    Ok(rows)
}

fn run_point(
    dataset: &ActivationDataset,
    pt: &SweepPoint,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> SweepRow {
    let (sparsity_kind, sparsity_value) = match pt.arch.sparsity {
        Sparsity::Lambda(l) => ("lambda", l),
        Sparsity::K(k) => ("k", k as f64),
    };
    let mut row = SweepRow {
        arch: pt.arch.kind.to_string(),
        sparsity_kind: sparsity_kind.to_string(),
        sparsity_value,
        expansion: pt.expansion,
        seed: cfg.seed,
        final_val_mse: None,
        final_val_l0: None,
        final_val_l1: None,
        dead_frac: None,
        steps: None,
        wall_s: None,
        status: String::new(),
        checkpoint_path: String::new(),
    };
    let result = train::<f32>(dataset, &pt.arch, pt.expansion, cfg).and_then(|out| {
        let path: Option<PathBuf> = checkpoint_dir.map(|dir| dir.join(checkpoint_name(pt)));
        if let Some(p) = &path {
            write_checkpoint(&pt.arch, &out.params, p)?;
        }
        Ok((out.report, path))
    });
    match result {
        Ok((report, path)) => {
            let last = report.last();
            row.final_val_mse = Some(last.val_mse);
            row.final_val_l0 = Some(last.val_l0);
            row.final_val_l1 = Some(last.val_l1);
            row.dead_frac = Some(last.dead_fraction);
            row.steps = Some(report.total_steps);
            row.wall_s = Some(report.wall_s);
            row.status = "ok".to_string();
            row.checkpoint_path = path.map(|p| p.display().to_string()).unwrap_or_default();
        }
        Err(e) => row.status = e.to_string(),
    }
    row
}

/// Writes the sweep report. With `include_wall_time` off the `wall_s` column
/// is left empty so that reruns compare byte-for-byte.
pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>, include_wall_time: bool) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut r = r.clone();
        if !include_wall_time {
            r.wall_s = None;
        }
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    if rows.is_empty() {
        w.write_record(SWEEP_HEADER).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SWEEP_HEADER: [&str; 13] = [
    "arch",
    "sparsity_kind",
    "sparsity_value",
    "expansion",
    "seed",
    "final_val_mse",
    "final_val_l0",
    "final_val_l1",
    "dead_frac",
    "steps",
    "wall_s",
    "status",
    "checkpoint_path",
];
