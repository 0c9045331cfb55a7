//! JSON run configs. Unknown keys are rejected; relative paths resolve
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use saelab::analysis::Pooling;
use saelab::ontology::DEFAULT_THRESHOLDS;
use saelab::probe::{FeatureMode, ProbeConfig};
use saelab::sweep::SweepGrid;
use saelab::{SaeArchitecture, TrainConfig};

use crate::fail::{CmdResult, Failure};

pub trait RunConfig: DeserializeOwned + Serialize {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf>;
    fn inputs(&self) -> Vec<&Path>;
    fn out_mut(&mut self) -> &mut Option<PathBuf>;
    fn set_seed(&mut self, seed: u64);
}

pub fn load<C: RunConfig>(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CmdResult<C> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let mut cfg: C = serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    for p in cfg.paths_mut() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(out) = out {
        *cfg.out_mut() = Some(out);
    } else if let Some(o) = cfg.out_mut().as_mut() {
        if o.is_relative() {
            *o = base.join(&*o);
        }
    }
    if cfg.out_mut().is_none() {
        return Err(Failure::config("no output directory: set \"out\" or pass --out"));
    }
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    for p in cfg.inputs() {
        if !p.is_file() {
            return Err(Failure::config(format!("input file not found: {}", p.display())));
        }
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn default_expansion() -> usize {
    8
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmd {
    pub dataset: PathBuf,
    pub arch: SaeArchitecture,
    #[serde(default = "default_expansion")]
    pub expansion: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub train: TrainConfig,
    /// Wall-clock time makes reruns differ, so it is off by default.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig for TrainCmd {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        vec![&mut self.dataset]
    }
    fn inputs(&self) -> Vec<&Path> {
        vec![&self.dataset]
    }
    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        &mut self.out
    }
    fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCmd {
    pub dataset: PathBuf,
    #[serde(default)]
    pub grid: SweepGrid,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "yes")]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig for SweepCmd {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        vec![&mut self.dataset]
    }
    fn inputs(&self) -> Vec<&Path> {
        vec![&self.dataset]
    }
    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        &mut self.out
    }
    fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub tag: String,
    pub path: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCmd {
    pub checkpoint: PathBuf,
    pub datasets: Vec<DatasetRef>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig for EvalCmd {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut v = vec![&mut self.checkpoint];
        v.extend(self.datasets.iter_mut().map(|d| &mut d.path));
        v
    }
    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![&self.checkpoint];
        v.extend(self.datasets.iter().map(|d| d.path.as_path()));
        v
    }
    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        &mut self.out
    }
    fn set_seed(&mut self, _: u64) {}
}

fn default_modes() -> Vec<FeatureMode> {
    vec![FeatureMode::Raw, FeatureMode::Latent]
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeCmd {
    /// Labeled training data for the probes.
    pub train: PathBuf,
    /// Needed for the latent and pre-activation modes.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_modes")]
    pub modes: Vec<FeatureMode>,
    /// Evaluation domains sharing the training label space.
    #[serde(default)]
    pub domains: Vec<DatasetRef>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig for ProbeCmd {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut v = vec![&mut self.train];
        v.extend(self.checkpoint.as_mut());
        v.extend(self.domains.iter_mut().map(|d| &mut d.path));
        v
    }
    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![&self.train];
        v.extend(self.checkpoint.as_deref());
        v.extend(self.domains.iter().map(|d| d.path.as_path()));
        v
    }
    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        &mut self.out
    }
    fn set_seed(&mut self, seed: u64) {
        self.probe.seed = seed;
    }
}

fn default_rate() -> f64 {
    0.5
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OntologyCmd {
    /// Labeled dataset whose labels index the hierarchy leaves.
    pub dataset: PathBuf,
    pub hierarchy: PathBuf,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Minimum per-class firing rate for a feature to be associated with a class.
    #[serde(default = "default_rate")]
    pub firing_rate: f64,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Number of random directions for the baseline; 0 skips it.
    #[serde(default)]
    pub random_directions: usize,
    #[serde(default)]
    pub raw_baseline: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig for OntologyCmd {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut v = vec![&mut self.dataset, &mut self.hierarchy];
        v.extend(self.checkpoint.as_mut());
        v
    }
    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![&self.dataset, &self.hierarchy];
        v.extend(self.checkpoint.as_deref());
        v
    }
    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        &mut self.out
    }
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

fn default_fraction() -> f64 {
    0.01
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapCmd {
    /// Activation files read as `positions × features` matrices.
    pub a: PathBuf,
    pub b: PathBuf,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig for OverlapCmd {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        vec![&mut self.a, &mut self.b]
    }
    fn inputs(&self) -> Vec<&Path> {
        vec![&self.a, &self.b]
    }
    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        &mut self.out
    }
    fn set_seed(&mut self, _: u64) {}
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerExportCmd {
    pub checkpoint: PathBuf,
    pub features: Vec<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig for SteerExportCmd {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        vec![&mut self.checkpoint]
    }
    fn inputs(&self) -> Vec<&Path> {
        vec![&self.checkpoint]
    }
    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        &mut self.out
    }
    fn set_seed(&mut self, _: u64) {}
}
