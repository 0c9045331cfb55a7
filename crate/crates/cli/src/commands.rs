use std::path::Path;

use serde::Serialize;

use saelab::analysis::{feature_overlap_pooled, write_overlap_json};
use saelab::metrics::{dataset_eval, write_metrics_csv};
use saelab::ontology::{
    encoder_report, random_baseline, raw_neuron_baseline, write_ontology_csv, Hierarchy, OntologyReport, SaeEncoder,
};
use saelab::probe::{
    domain_shift_eval, eval_probe, featurize, fit_probe, write_probe, write_probe_csv, Domain, ProbeReport,
};
use saelab::sae::{read_checkpoint, write_checkpoint, Checkpoint};
use saelab::steering::export_steering;
use saelab::store::open_dataset;
use saelab::sweep::{sweep, write_sweep_csv};
use saelab::trainer::{train, write_report_csv};
use saelab::{ActivationDataset, Scalar, TrainReport};

use crate::config::*;
use crate::fail::{CmdResult, Failure};
use crate::output::OutDir;

fn out_dir<C: RunConfig>(cfg: &mut C) -> CmdResult<OutDir> {
    let root = cfg.out_mut().clone().expect("checked when loading");
    OutDir::create(&root)
}

fn checkpoint(path: &Path) -> CmdResult<Checkpoint<f64>> {
    Ok(read_checkpoint::<f64>(path)?)
}

pub fn train_cmd(mut cfg: TrainCmd) -> CmdResult {
    cfg.train.validate()?;
    if cfg.expansion == 0 {
        return Err(Failure::config("expansion must be ≥ 1"));
    }
    let ds = open_dataset(&cfg.dataset)?;
    cfg.arch.validate(ds.dim() * cfg.expansion)?;
    let mut out = out_dir(&mut cfg)?;
    let mut report = match cfg.precision {
        Precision::F32 => run_train::<f32>(&ds, &cfg, &mut out)?,
        Precision::F64 => run_train::<f64>(&ds, &cfg, &mut out)?,
    };
    if !cfg.record_wall_time {
        report.wall_s = 0.0;
    }
    write_report_csv(&report, out.file("train_report.csv"))?;
    out.write_json("summary.json", &report)?;
    let last = report.last();
    eprintln!(
        "trained {} for {} steps: val mse {:.6}, l0 {:.3}, dead {:.3}",
        report.arch.kind, report.total_steps, last.val_mse, last.val_l0, last.dead_fraction
    );
    out.finish("train", &cfg)
}

fn run_train<F: Scalar>(ds: &ActivationDataset, cfg: &TrainCmd, out: &mut OutDir) -> CmdResult<TrainReport> {
    let res = train::<F>(ds, &cfg.arch, cfg.expansion, &cfg.train)?;
    write_checkpoint(&cfg.arch, &res.params, out.file("checkpoint.saeprm"))?;
    Ok(res.report)
}

pub fn sweep_cmd(mut cfg: SweepCmd) -> CmdResult {
    cfg.grid.validate()?;
    cfg.train.validate()?;
    let ds = open_dataset(&cfg.dataset)?;
    let mut out = out_dir(&mut cfg)?;
    let ckpt_dir = cfg.save_checkpoints.then(|| out.file("checkpoints"));
    if let Some(d) = &ckpt_dir {
        std::fs::create_dir_all(d).map_err(|e| Failure::Io(format!("{}: {e}", d.display())))?;
    }
    let mut rows = sweep(&ds, &cfg.grid, &cfg.train, ckpt_dir.as_deref())?;
    // Paths in the report are relative to the output directory.
    if let Some(d) = &ckpt_dir {
        for r in &mut rows {
            if let Ok(rel) = Path::new(&r.checkpoint_path).strip_prefix(d) {
                r.checkpoint_path = Path::new("checkpoints").join(rel).display().to_string();
            }
        }
    }
    write_sweep_csv(&rows, out.file("sweep.csv"), cfg.record_wall_time)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    eprintln!("sweep finished: {} runs, {failed} failed", rows.len());
    out.finish("sweep", &cfg)
}

pub fn eval_cmd(mut cfg: EvalCmd) -> CmdResult {
    if cfg.datasets.is_empty() {
        return Err(Failure::config("eval needs at least one dataset"));
    }
    let ck = checkpoint(&cfg.checkpoint)?;
    let mut reports = Vec::new();
    for d in &cfg.datasets {
        let ds = open_dataset(&d.path)?;
        reports.push(dataset_eval(&ck.params, &ck.arch, &ds.view(), &d.tag)?);
    }
    let mut out = out_dir(&mut cfg)?;
    write_metrics_csv(&reports, out.file("metrics.csv"))?;
    out.write_json("metrics.json", &reports)?;
    out.finish("eval", &cfg)
}

pub fn probe_cmd(mut cfg: ProbeCmd) -> CmdResult {
    cfg.probe.validate()?;
    if cfg.modes.is_empty() {
        return Err(Failure::config("probe needs at least one feature mode"));
    }
    let train_ds = open_dataset(&cfg.train)?;
    let labels = train_ds
        .labels()
        .ok_or_else(|| Failure::config(format!("{} has no labels", cfg.train.display())))?
        .to_vec();
    let domains: Vec<(String, ActivationDataset)> = cfg
        .domains
        .iter()
        .map(|d| Ok((d.tag.clone(), open_dataset(&d.path)?)))
        .collect::<CmdResult<_>>()?;
    for (tag, ds) in &domains {
        if !ds.has_labels() {
            return Err(Failure::config(format!("domain {tag:?} has no labels")));
        }
    }
    let ck = cfg.checkpoint.as_deref().map(checkpoint).transpose()?;
    let sae = ck.as_ref().map(|c| (&c.params, &c.arch));
    let mut out = out_dir(&mut cfg)?;
    let mut reports = Vec::new();
    for &mode in &cfg.modes {
        let feats = featurize(sae, &train_ds.view(), mode)?;
        let (probe, train_loss) = fit_probe(feats.view(), &labels, train_ds.n_classes(), &cfg.probe)?;
        let probe = probe.with_mode(mode);
        let mut accuracies = vec![("train".to_string(), eval_probe(&probe, feats.view(), &labels)?)];
        let dom_feats = domains
            .iter()
            .map(|(_, ds)| featurize(sae, &ds.view(), mode))
            .collect::<saelab::Result<Vec<_>>>()?;
        let dom_labels: Vec<Vec<u32>> = domains
            .iter()
            .map(|(_, ds)| ds.labels().unwrap_or_default().to_vec())
            .collect();
        let doms: Vec<Domain<'_, f64>> = domains
            .iter()
            .zip(&dom_feats)
            .zip(&dom_labels)
            .map(|(((tag, ds), f), l)| Domain {
                tag: tag.clone(),
                features: f.view(),
                labels: l,
                n_classes: ds.n_classes(),
            })
            .collect();
        accuracies.extend(domain_shift_eval(&probe, &doms)?);
        write_probe(&probe, out.file(&format!("probe_{mode}.saeprb")))?;
        reports.push(ProbeReport {
            feature_mode: mode,
            config: cfg.probe,
            accuracies,
            train_loss,
        });
    }
    write_probe_csv(&reports, out.file("probe.csv"))?;
    out.write_json("probe_report.json", &reports)?;
    out.finish("probe", &cfg)
}

#[derive(Serialize)]
struct OntologySummary<'a> {
    label: &'a str,
    n_features: usize,
    n_inactive: usize,
    n_single_class: usize,
    n_multi_class: usize,
    counts: &'a [saelab::ontology::ThresholdCount],
}

impl<'a> From<&'a OntologyReport> for OntologySummary<'a> {
    fn from(r: &'a OntologyReport) -> Self {
        OntologySummary {
            label: &r.label,
            n_features: r.n_features,
            n_inactive: r.n_inactive,
            n_single_class: r.n_single_class,
            n_multi_class: r.n_multi_class,
            counts: &r.counts,
        }
    }
}

pub fn ontology_cmd(mut cfg: OntologyCmd) -> CmdResult {
    if cfg.checkpoint.is_none() && cfg.random_directions == 0 && !cfg.raw_baseline {
        return Err(Failure::config(
            "nothing to do: give a checkpoint, random_directions or raw_baseline",
        ));
    }
    let h = Hierarchy::load(&cfg.hierarchy)?;
    let ds = open_dataset(&cfg.dataset)?;
    let view = ds.view();
    let mut reports = Vec::new();
    if let Some(p) = &cfg.checkpoint {
        let ck = checkpoint(p)?;
        let enc = SaeEncoder {
            params: &ck.params,
            arch: &ck.arch,
        };
        reports.push(encoder_report(
            "sae",
            &enc,
            &view,
            &h,
            cfg.firing_rate,
            &cfg.thresholds,
        )?);
    }
    if cfg.random_directions > 0 {
        reports.push(random_baseline::<f64>(
            cfg.random_directions,
            &view,
            &h,
            cfg.firing_rate,
            &cfg.thresholds,
            cfg.seed,
        )?);
    }
    if cfg.raw_baseline {
        reports.push(raw_neuron_baseline::<f64>(&view, &h, cfg.firing_rate, &cfg.thresholds)?);
    }
    let mut out = out_dir(&mut cfg)?;
    for r in &reports {
        write_ontology_csv(r, out.file(&format!("ontology_{}.csv", r.label)))?;
    }
    let summary: Vec<OntologySummary<'_>> = reports.iter().map(Into::into).collect();
    out.write_json("ontology_summary.json", &summary)?;
    out.finish("ontology", &cfg)
}

pub fn overlap_cmd(mut cfg: OverlapCmd) -> CmdResult {
    let a = open_dataset(&cfg.a)?.to_array::<f64>();
    let b = open_dataset(&cfg.b)?.to_array::<f64>();
    let r = feature_overlap_pooled(a.view(), b.view(), cfg.fraction, cfg.pooling)?;
    let mut out = out_dir(&mut cfg)?;
    write_overlap_json(&r, out.file("overlap.json"))?;
    println!(
        "jaccard {:.6} ({} shared of {} / {})",
        r.jaccard, r.intersection, r.a_size, r.b_size
    );
    out.finish("overlap", &cfg)
}

pub fn steer_export_cmd(mut cfg: SteerExportCmd) -> CmdResult {
    let ck = checkpoint(&cfg.checkpoint)?;
    let mut out = out_dir(&mut cfg)?;
    let bin = out.file("steering.saestr");
    let json = out.file("steering.json");
    export_steering(&ck.params, &cfg.features, &bin, Some(&json))?;
    out.finish("steer-export", &cfg)
}

#[derive(Serialize)]
struct DatasetInfo<'a> {
    path: String,
    n_samples: usize,
    dim: usize,
    has_labels: bool,
    n_classes: usize,
    class_counts: Option<Vec<usize>>,
    meta: &'a saelab::DatasetMeta,
}

pub fn dataset_info_cmd(path: &Path, out: Option<&Path>) -> CmdResult {
    if !path.is_file() {
        return Err(Failure::config(format!("input file not found: {}", path.display())));
    }
    let ds = open_dataset(path)?;
    let class_counts = ds.labels().map(|l| {
        let mut c = vec![0usize; ds.n_classes()];
        for &y in l {
            c[y as usize] += 1;
        }
        c
    });
    let info = DatasetInfo {
        path: path.display().to_string(),
        n_samples: ds.n_samples(),
        dim: ds.dim(),
        has_labels: ds.has_labels(),
        n_classes: ds.n_classes(),
        class_counts,
        meta: ds.meta(),
    };
    let text = serde_json::to_string_pretty(&info).map_err(|e| Failure::config(e.to_string()))?;
    println!("{text}");
    if let Some(o) = out {
        let mut dir = OutDir::create(o)?;
        dir.write_json("dataset_info.json", &info)?;
        dir.finish("dataset-info", &serde_json::json!({ "dataset": info.path }))?;
    }
    Ok(())
}
