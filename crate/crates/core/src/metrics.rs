//! Reconstruction and sparsity metrics.
//!
//! `mse` is the per-dimension normalized error `‖x − x̂‖² / d`, which differs
//! from the un-normalized reconstruction term used in the training loss.
//! `l0` counts exact nonzeros; every SAE variant emits exact zeros.

use std::path::Path;

use ndarray::{s, Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::{forward_batch, SaeArchitecture, SaeParams};
use crate::scalar::Scalar;
use crate::store::{dataset_mean, ActivationDataset, DatasetView};

const EVAL_CHUNK: usize = 1024;

pub fn mse<F: Scalar>(x: ArrayView1<'_, F>, x_hat: ArrayView1<'_, F>) -> Result<F> {
    if x.len() != x_hat.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            found: x_hat.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::invalid("mse of empty vectors"));
    }
    let ss = x
        .iter()
        .zip(x_hat.iter())
        .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(ss / F::lit(x.len() as f64))
}

pub fn l1<F: Scalar>(z: ArrayView1<'_, F>) -> F {
    z.iter().fold(F::zero(), |acc, &v| acc + v.abs())
}

pub fn l0<F: Scalar>(z: ArrayView1<'_, F>) -> usize {
    z.iter().filter(|&&v| v != F::zero()).count()
}

/// Dataset-level averages of the per-sample metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset_tag: String,
    pub n_samples: usize,
    pub mean_mse: f64,
    /// Also used as the "average activation magnitude".
    pub mean_l1: f64,
    pub mean_l0: f64,
    /// Latents that never fire over the whole dataset.
    pub dead_fraction: f64,
    /// `1 − Σ‖x−x̂‖² / Σ‖x−x̄‖²`. Not part of the reconstruction/sparsity
    /// metric set proper; kept for sanity checks.
    pub explained_variance: f64,
    /// Set when the dataset has zero variance, in which case
    /// `explained_variance` is 1 for perfect reconstruction and 0 otherwise.
    pub ev_degenerate: bool,
}

/// Evaluates an SAE on every row of `view`.
pub fn dataset_eval<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    view: &DatasetView<'_>,
    tag: &str,
) -> Result<MetricsReport> {
    if view.dim() != params.d() {
        return Err(Error::DimMismatch {
            expected: params.d(),
            found: view.dim(),
        });
    }
    if view.is_empty() {
        return Err(Error::invalid(format!("dataset {tag:?} has no rows")));
    }
    let mean: Array1<F> = dataset_mean(view)?;
    let d = params.d();
    let mut fired = vec![false; params.n()];
    let (mut sum_mse, mut sum_l1, mut sum_l0) = (0.0f64, 0.0f64, 0.0f64);
    let (mut sse, mut sst) = (0.0f64, 0.0f64);
    for chunk in view.indices().chunks(EVAL_CHUNK) {
        let x = view.dataset().gather::<F>(chunk);
        let fwd = forward_batch(params, arch, x.view())?;
        for r in 0..x.nrows() {
            let xr = x.slice(s![r, ..]);
            let xh = fwd.x_hat.slice(s![r, ..]);
            let zr = fwd.z.slice(s![r, ..]);
            let m = mse(xr, xh)?.as_f64();
            sum_mse += m;
            sse += m * d as f64;
            sum_l1 += l1(zr).as_f64();
            sum_l0 += l0(zr) as f64;
            for (f, &v) in fired.iter_mut().zip(zr.iter()) {
                *f |= v != F::zero();
            }
            sst += xr
                .iter()
                .zip(mean.iter())
                .map(|(&a, &b)| (a - b).as_f64().powi(2))
                .sum::<f64>();
        }
    }
    let n = view.len() as f64;
    let (explained_variance, ev_degenerate) = if sst > 0.0 {
        ((1.0 - sse / sst).min(1.0), false)
    } else if sse == 0.0 {
        (1.0, true)
    } else {
        (0.0, true)
    };
    Ok(MetricsReport {
        dataset_tag: tag.to_string(),
        n_samples: view.len(),
        mean_mse: sum_mse / n,
        mean_l1: sum_l1 / n,
        mean_l0: sum_l0 / n,
        dead_fraction: fired.iter().filter(|&&f| !f).count() as f64 / params.n() as f64,
        explained_variance,
        ev_degenerate,
    })
}

/// One report per dataset, in input order. A failure on one dataset does not
/// affect the others.
pub fn ood_eval<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    datasets: &[(String, &ActivationDataset)],
) -> Vec<Result<MetricsReport>> {
    datasets
        .iter()
        .map(|(tag, ds)| dataset_eval(params, arch, &ds.view(), tag))
        .collect()
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    dataset_tag: &'a str,
    n: usize,
    mean_mse: f64,
    mean_l1: f64,
    mean_l0: f64,
    dead_frac: f64,
    explained_var: f64,
}

/// Writes `dataset_tag,n,mean_mse,mean_l1,mean_l0,dead_frac,explained_var`.
pub fn write_metrics_csv(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in reports {
        w.serialize(MetricsRow {
            dataset_tag: &r.dataset_tag,
            n: r.n_samples,
            mean_mse: r.mean_mse,
            mean_l1: r.mean_l1,
            mean_l0: r.mean_l0,
            dead_frac: r.dead_fraction,
            explained_var: r.explained_variance,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("csv output {}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::SaeKind;
    use crate::store::DatasetMeta;
    use ndarray::{array, Array2};

    #[test]
    fn basic_values() {
        assert_eq!(mse(array![1.0, 2.0].view(), array![1.0, 2.0].view()).unwrap(), 0.0);
        assert_eq!(mse(array![0.0, 0.0].view(), array![3.0, 4.0].view()).unwrap(), 12.5);
        assert!(mse(array![0.0].view(), array![3.0, 4.0].view()).is_err());
        assert_eq!(l1(Array1::<f64>::zeros(4).view()), 0.0);
        assert_eq!(l1(array![1.0, -2.0, 3.0].view()), 6.0);
        assert_eq!(l0(array![0.0, 0.5, 0.0, 2.0].view()), 2);
        assert_eq!(l0(Array1::<f32>::zeros(3).view()), 0);
    }

    fn identity_sae(d: usize) -> SaeParams<f64> {
        // [I; -I] encoder with [I, -I] decoder reconstructs any x exactly under ReLU.
        let mut w_enc = Array2::zeros((2 * d, d));
        let mut w_dec = Array2::zeros((d, 2 * d));
        for i in 0..d {
            w_enc[[i, i]] = 1.0;
            w_enc[[d + i, i]] = -1.0;
            w_dec[[i, i]] = 1.0;
            w_dec[[i, d + i]] = -1.0;
        }
        SaeParams {
            w_enc,
            b_enc: Array1::zeros(2 * d),
            w_dec,
            b_dec: Array1::zeros(d),
            gate: None,
        }
    }

    #[test]
    fn repeated_row_is_degenerate() {
        let rows = Array2::from_shape_fn((5, 3), |(_, j)| j as f64 + 1.0);
        let ds = ActivationDataset::from_rows(rows.view(), None, DatasetMeta::default()).unwrap();
        let rep = dataset_eval(&identity_sae(3), &SaeArchitecture::relu(0.0), &ds.view(), "rep").unwrap();
        assert_eq!(rep.mean_mse, 0.0);
        assert_eq!(rep.explained_variance, 1.0);
        assert!(rep.ev_degenerate);
        assert_eq!(rep.dead_fraction, 0.5);
    }

    #[test]
    fn perfect_reconstruction_has_unit_ev() {
        let rows = Array2::from_shape_fn((20, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let ds = ActivationDataset::from_rows(rows.view(), None, DatasetMeta::default()).unwrap();
        let arch = SaeArchitecture::relu(0.0);
        assert_eq!(arch.kind, SaeKind::Relu);
        let rep = dataset_eval(&identity_sae(4), &arch, &ds.view(), "id").unwrap();
        assert_eq!(rep.mean_mse, 0.0);
        assert_eq!(rep.explained_variance, 1.0);
        assert!(!rep.ev_degenerate);
    }

    #[test]
    fn ood_eval_preserves_order_and_isolates_failures() {
        let a = ActivationDataset::from_rows(Array2::<f64>::ones((3, 2)).view(), None, DatasetMeta::default()).unwrap();
        let b = ActivationDataset::from_rows(Array2::<f64>::ones((3, 5)).view(), None, DatasetMeta::default()).unwrap();
        let p = identity_sae(2);
        let arch = SaeArchitecture::relu(0.0);
        let out = ood_eval(&p, &arch, &[("a".into(), &a), ("b".into(), &b), ("a2".into(), &a)]);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].as_ref().unwrap().dataset_tag, "a");
        assert!(out[1].is_err());
        assert_eq!(out[2].as_ref().unwrap().dataset_tag, "a2");
        assert!(ood_eval(&p, &arch, &[]).is_empty());
    }
}
