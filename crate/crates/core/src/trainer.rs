//! SAE training loop.
//!
//! Adam with a linear learning-rate warmup/decay, a linear λ warmup, decoder
//! renormalization after each step (ReLU and Gated), and windowed dead-latent
//! tracking. Steps run strictly in order; with a fixed seed the resulting
//! parameters are bit-identical across runs.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::dataset_eval;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::sae::{grad_with_forward, init_params, normalize_decoder, LossBreakdown, SaeArchitecture, SaeParams};
use crate::scalar::Scalar;
use crate::schedule::LinearSchedule;
use crate::store::{dataset_mean, ActivationDataset, Batch, DatasetView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_warmup_frac: f64,
    pub lr_decay_frac: f64,
    pub lambda_warmup_frac: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Steps without a firing before a latent counts as dead.
    pub dead_window: usize,
    /// Evaluate every this many steps; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Held-out fraction for the validation metrics in the report.
    pub val_fraction: f64,
    /// Batches prepared ahead on a separate thread; 0 disables prefetching.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 64,
            lr: 1e-4,
            lr_warmup_frac: 0.05,
            lr_decay_frac: 0.20,
            lambda_warmup_frac: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            dead_window: 1000,
            eval_every: 0,
            val_fraction: 0.01,
            prefetch: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must lie in [0, 1)")))
            }
        };
        frac("lr_warmup_frac", self.lr_warmup_frac)?;
        frac("lr_decay_frac", self.lr_decay_frac)?;
        frac("lambda_warmup_frac", self.lambda_warmup_frac)?;
        if self.lr_warmup_frac + self.lr_decay_frac >= 1.0 {
            return Err(Error::invalid("lr_warmup_frac + lr_decay_frac must be < 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be ≥ 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr = {} must be finite and ≥ 0", self.lr)));
        }
        if self.dead_window == 0 {
            return Err(Error::invalid("dead_window must be ≥ 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("val_fraction must lie in (0, 1)"));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            frac(name, v)?;
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::invalid("adam_eps must be > 0"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Tracks, per latent, the last step on which it fired.
#[derive(Debug, Clone)]
pub struct DeadNeuronTracker {
    window: usize,
    last_fired: Vec<Option<usize>>,
    step: usize,
}

impl DeadNeuronTracker {
    pub fn new(n: usize, window: usize) -> Self {
        assert!(window >= 1, "window must be >= 1");
        DeadNeuronTracker {
            window,
            last_fired: vec![None; n],
            step: 0,
        }
    }

    /// Records one step's activations (`b × n`).
    pub fn observe<F: Scalar>(&mut self, z: ArrayView2<'_, F>) {
        for row in z.outer_iter() {
            for (lf, &v) in self.last_fired.iter_mut().zip(row.iter()) {
                if v > F::zero() {
                    *lf = Some(self.step);
                }
            }
        }
        self.step += 1;
    }

    /// Latents with no firing in the trailing window of observed steps.
    pub fn dead_mask(&self) -> Vec<bool> {
        let Some(now) = self.step.checked_sub(1) else {
            return vec![true; self.last_fired.len()];
        };
        self.last_fired
            .iter()
            .map(|lf| lf.is_none_or(|s| now - s >= self.window))
            .collect()
    }

    pub fn dead_fraction(&self) -> f64 {
        if self.last_fired.is_empty() {
            return 0.0;
        }
        let dead = self.dead_mask().iter().filter(|&&d| d).count();
        dead as f64 / self.last_fired.len() as f64
    }
}

/// Dead fraction after each step of an activation stream.
pub fn track_dead_neurons<'a, F: Scalar, I>(stream: I, n: usize, window: usize) -> Vec<f64>
where
    I: IntoIterator<Item = ArrayView2<'a, F>>,
{
    let mut tracker = DeadNeuronTracker::new(n, window);
    stream
        .into_iter()
        .map(|z| {
            tracker.observe(z);
            tracker.dead_fraction()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub lr: f64,
    pub lambda_effective: f64,
    pub train_loss: LossBreakdown,
    /// Mean total training loss over the last 100 steps.
    pub train_loss_smoothed: f64,
    pub val_mse: f64,
    pub val_l0: f64,
    pub val_l1: f64,
    pub dead_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub arch: SaeArchitecture,
    pub expansion: usize,
    pub precision: String,
    /// How λ is applied to the L1 term; always the batch mean.
    pub lambda_reduction: String,
    pub total_steps: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub records: Vec<EvalRecord>,
    pub checksum: String,
    pub wall_s: f64,
}

impl TrainReport {
    pub fn last(&self) -> &EvalRecord {
        self.records.last().expect("a report always has a final record")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput<F> {
    pub params: SaeParams<F>,
    pub report: TrainReport,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(epoch as u64 + 1)
}

/// Trains an SAE on `dataset` with a held-out validation split.
pub fn train<F: Scalar>(
    dataset: &ActivationDataset,
    arch: &SaeArchitecture,
    expansion: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutput<F>> {
    cfg.validate()?;
    let (train_view, val_view) = dataset.view().split(cfg.val_fraction, cfg.seed)?;
    if train_view.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    train_on(&train_view, &val_view, arch, expansion, cfg)
}

/// Trains on explicit train/validation views. An empty validation view falls
/// back to evaluating on the training rows.
pub fn train_on<F: Scalar>(
    train_view: &DatasetView<'_>,
    val_view: &DatasetView<'_>,
    arch: &SaeArchitecture,
    expansion: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutput<F>> {
    cfg.validate()?;
    let started = Instant::now();
    let d = train_view.dim();
    let eval_view = if val_view.is_empty() { train_view } else { val_view };

    let mean = dataset_mean::<F>(train_view)?;
    let mut params = init_params::<F>(arch, d, expansion, cfg.seed, Some(&mean))?;
    let mut adam = AdamState::new(&params);
    let adam_cfg = cfg.adam();

    let steps_per_epoch = train_view.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let lr_sched = LinearSchedule::new(total, cfg.lr_warmup_frac, cfg.lr_decay_frac);
    let lam_sched = LinearSchedule::new(total, cfg.lambda_warmup_frac, 0.0);
    let lambda = arch.lambda();

    let mut tracker = DeadNeuronTracker::new(params.n(), cfg.dead_window);
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(100);
    let mut records = Vec::new();
    let mut step = 0usize;

    let mut run_step = |batch: Batch<F>, step: usize, params: &mut SaeParams<F>| -> Result<()> {
        let lr_mult = lr_sched.step(step);
        let lam_eff = lambda * lam_sched.step(step);
        let (lb, g, z) = step_grads(params, arch, &batch, F::lit(lam_eff))?;
        if !lb.total.is_finite() || !g.is_finite() {
            return Err(Error::Diverged { step });
        }
        adam_step(params, &g, &mut adam, F::lit(cfg.lr * lr_mult), &adam_cfg);
        if arch.normalizes_decoder() {
            normalize_decoder(params)?;
        }
        if !params.is_finite() {
            return Err(Error::Diverged { step });
        }
        tracker.observe(z.view());
        if recent.len() == 100 {
            recent.pop_front();
        }
        recent.push_back(lb.total);
        let last = step + 1 == total;
        if last || (cfg.eval_every > 0 && (step + 1).is_multiple_of(cfg.eval_every)) {
            let m = dataset_eval(params, arch, eval_view, "val")?;
            records.push(EvalRecord {
                step: step + 1,
                lr: cfg.lr * lr_mult,
                lambda_effective: lam_eff,
                train_loss: lb,
                train_loss_smoothed: recent.iter().sum::<f64>() / recent.len() as f64,
                val_mse: m.mean_mse,
                val_l0: m.mean_l0,
                val_l1: m.mean_l1,
                dead_fraction: tracker.dead_fraction(),
            });
        }
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let batches = train_view.batches::<F>(cfg.batch_size, Some(epoch_seed(cfg.seed, epoch)));
        if cfg.prefetch == 0 {
            for batch in batches {
                run_step(batch, step, &mut params)?;
                step += 1;
            }
        } else {
            std::thread::scope(|scope| -> Result<()> {
                let (tx, rx) = mpsc::sync_channel(cfg.prefetch);
                scope.spawn(move || {
                    for batch in batches {
                        if tx.send(batch).is_err() {
                            break;
                        }
                    }
                });
                for batch in rx {
                    run_step(batch, step, &mut params)?;
                    step += 1;
                }
                Ok(())
            })?;
        }
    }
    debug_assert_eq!(step, total);

    let report = TrainReport {
        arch: *arch,
        expansion,
        precision: F::NAME.to_string(),
        lambda_reduction: "batch_mean".to_string(),
        total_steps: total,
        n_train: train_view.len(),
        n_val: val_view.len(),
        records,
        checksum: params.checksum(),
        wall_s: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutput { params, report })
}

fn step_grads<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    batch: &Batch<F>,
    lambda: F,
) -> Result<(LossBreakdown, SaeParams<F>, ndarray::Array2<F>)> {
    let (lb, g, fwd) = grad_with_forward(params, arch, batch.rows.view(), lambda)?;
    Ok((lb, g, fwd.z))
}

#[derive(Serialize)]
struct RecordRow {
    step: usize,
    lr: f64,
    lambda_effective: f64,
    train_total: f64,
    train_reconstruction: f64,
    train_sparsity: f64,
    train_auxiliary: f64,
    train_smoothed: f64,
    val_mse: f64,
    val_l0: f64,
    val_l1: f64,
    dead_frac: f64,
}

/// Writes the per-evaluation records as CSV.
pub fn write_report_csv(report: &TrainReport, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::metrics::csv_err(path, e))?;
    for r in &report.records {
        w.serialize(RecordRow {
            step: r.step,
            lr: r.lr,
            lambda_effective: r.lambda_effective,
            train_total: r.train_loss.total,
            train_reconstruction: r.train_loss.reconstruction,
            train_sparsity: r.train_loss.sparsity,
            train_auxiliary: r.train_loss.auxiliary,
            train_smoothed: r.train_loss_smoothed,
            val_mse: r.val_mse,
            val_l0: r.val_l0,
            val_l1: r.val_l1,
            dead_frac: r.dead_fraction,
        })
        .map_err(|e| crate::metrics::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr_warmup_frac: 0.5,
            lr_decay_frac: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lambda_warmup_frac: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"epochs": 2, "lrr": 1.0}"#).unwrap_err();
        assert!(err.to_string().contains("lrr"));
        let ok: TrainConfig = serde_json::from_str(r#"{"epochs": 2}"#).unwrap();
        assert_eq!(ok.batch_size, 64);
    }

    #[test]
    fn tracker_all_fire() {
        let z = Array2::<f64>::ones((3, 4));
        let fr = track_dead_neurons(std::iter::repeat_n(z.view(), 5), 4, 2);
        assert!(fr.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn tracker_window() {
        let on = array![[1.0f64, 0.0]];
        let off = array![[0.0f64, 0.0]];
        let mut t = DeadNeuronTracker::new(2, 2);
        t.observe(on.view());
        assert_eq!(t.dead_mask(), vec![false, true]);
        t.observe(off.view());
        assert_eq!(t.dead_mask(), vec![false, true]);
        t.observe(off.view());
        assert_eq!(t.dead_mask(), vec![true, true]);
        assert_eq!(t.dead_fraction(), 1.0);
    }
}
