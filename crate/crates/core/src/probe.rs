//! Linear probes on raw embeddings, SAE latents, or SAE pre-activations.
//!
//! Every feature mode is fit by the same procedure with the same
//! hyperparameters: multinomial logistic regression, zero-initialized, trained
//! by Adam on shuffled minibatches. There is no input standardization.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::csv_err;
use crate::optim::{adam_step, AdamConfig, AdamState, ParamBlocks};
use crate::sae::{encode_batch, pre_activations, SaeArchitecture, SaeParams};
use crate::scalar::Scalar;
use crate::store::DatasetView;

pub const PROBE_MAGIC: &[u8; 8] = b"SAEPRB01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Raw,
    Latent,
    PreActivation,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Raw => "raw",
            FeatureMode::Latent => "latent",
            FeatureMode::PreActivation => "pre_activation",
        }
    }

    fn code(self) -> u8 {
        match self {
            FeatureMode::Raw => 0,
            FeatureMode::Latent => 1,
            FeatureMode::PreActivation => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FeatureMode::Raw),
            1 => Some(FeatureMode::Latent),
            2 => Some(FeatureMode::PreActivation),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FeatureMode::Raw),
            "latent" => Ok(FeatureMode::Latent),
            "pre_activation" | "pre-activation" => Ok(FeatureMode::PreActivation),
            other => Err(Error::invalid(format!(
                "unknown feature mode {other:?} (expected raw, latent or pre_activation)"
            ))),
        }
    }
}

/// Features for `view` in the given mode. `sae` may be `None` only for
/// [`FeatureMode::Raw`].
pub fn featurize<F: Scalar>(
    sae: Option<(&SaeParams<F>, &SaeArchitecture)>,
    view: &DatasetView<'_>,
    mode: FeatureMode,
) -> Result<Array2<F>> {
    let x = view.to_array::<F>();
    featurize_rows(sae, x.view(), mode)
}

pub fn featurize_rows<F: Scalar>(
    sae: Option<(&SaeParams<F>, &SaeArchitecture)>,
    x: ArrayView2<'_, F>,
    mode: FeatureMode,
) -> Result<Array2<F>> {
    match (mode, sae) {
        (FeatureMode::Raw, _) => Ok(x.to_owned()),
        (FeatureMode::Latent, Some((p, arch))) => encode_batch(p, arch, x),
        (FeatureMode::PreActivation, Some((p, arch))) => pre_activations(p, arch, x),
        (m, None) => Err(Error::invalid(format!("feature mode {m} needs an SAE"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 1e-3,
            batch_size: 256,
            epochs: 10,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("probe batch_size and epochs must be ≥ 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("probe lr must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe<F> {
    /// `n_classes × feat_dim`.
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub feature_mode: FeatureMode,
}

impl<F: Scalar> ParamBlocks<F> for LinearProbe<F> {
    fn blocks(&self) -> Vec<&[F]> {
        vec![
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("contiguous"),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("contiguous"),
        ]
    }
}

impl<F: Scalar> LinearProbe<F> {
    pub fn zeros(n_classes: usize, feat_dim: usize, feature_mode: FeatureMode) -> Self {
        LinearProbe {
            w: Array2::zeros((n_classes, feat_dim)),
            b: Array1::zeros(n_classes),
            feature_mode,
        }
    }

    /// Standard-normal weights and biases; a chance-level reference probe.
    pub fn random(n_classes: usize, feat_dim: usize, feature_mode: FeatureMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || F::lit(StandardNormal.sample(&mut rng));
        let w = Array2::from_shape_simple_fn((n_classes, feat_dim), &mut draw);
        let b = Array1::from_shape_simple_fn(n_classes, &mut draw);
        LinearProbe { w, b, feature_mode }
    }

    pub fn with_mode(mut self, feature_mode: FeatureMode) -> Self {
        self.feature_mode = feature_mode;
        self
    }

    pub fn n_classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn feat_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn logits(&self, features: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if features.ncols() != self.feat_dim() {
            return Err(Error::DimMismatch {
                expected: self.feat_dim(),
                found: features.ncols(),
            });
        }
        Ok(features.dot(&self.w.t()) + &self.b)
    }

    pub fn predict(&self, features: ArrayView2<'_, F>) -> Result<Vec<u32>> {
        Ok(self.logits(features)?.outer_iter().map(|r| argmax(r) as u32).collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: Scalar>(v: ArrayView1<'_, F>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and its gradients for one batch.
fn xent_grad<F: Scalar>(probe: &LinearProbe<F>, x: ArrayView2<'_, F>, y: &[u32]) -> (f64, LinearProbe<F>) {
    let logits = x.dot(&probe.w.t()) + &probe.b;
    let b = F::lit(x.nrows() as f64);
    let mut d = logits;
    let mut loss = 0.0f64;
    for (mut row, &label) in d.outer_iter_mut().zip(y) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: F = row.sum();
        loss -= (row[label as usize] / s).as_f64().ln();
        row.mapv_inplace(|v| v / s / b);
        row[label as usize] -= F::one() / b;
    }
    let grads = LinearProbe {
        w: d.t().dot(&x),
        b: d.sum_axis(Axis(0)),
        feature_mode: probe.feature_mode,
    };
    (loss / x.nrows() as f64, grads)
}

/// Fits a probe. The result is tagged [`FeatureMode::Raw`]; callers fitting on
/// SAE features relabel it with [`LinearProbe::with_mode`].
pub fn fit_probe<F: Scalar>(
    features: ArrayView2<'_, F>,
    labels: &[u32],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(LinearProbe<F>, Vec<f64>)> {
    cfg.validate()?;
    if features.nrows() != labels.len() {
        return Err(Error::DimMismatch {
            expected: features.nrows(),
            found: labels.len(),
        });
    }
    if features.nrows() == 0 {
        return Err(Error::invalid("no training rows for probe"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::invalid("probe data contains a single class"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("probe features contain non-finite values"));
    }
    let mut probe = LinearProbe::zeros(n_classes, features.ncols(), FeatureMode::Raw);
    let mut adam = AdamState::new(&probe);
    let adam_cfg = AdamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let lr = F::lit(cfg.lr);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = features.select(Axis(0), chunk);
            let y: Vec<u32> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, g) = xent_grad(&probe, x.view(), &y);
            epoch_loss += loss * chunk.len() as f64;
            adam_step(&mut probe, &g, &mut adam, lr, &adam_cfg);
        }
        curve.push(epoch_loss / labels.len() as f64);
    }
    Ok((probe, curve))
}

/// Top-1 accuracy.
pub fn eval_probe<F: Scalar>(probe: &LinearProbe<F>, features: ArrayView2<'_, F>, labels: &[u32]) -> Result<f64> {
    if features.nrows() != labels.len() {
        return Err(Error::DimMismatch {
            expected: features.nrows(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("no rows to evaluate"));
    }
    let pred = probe.predict(features)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// A labeled evaluation domain.
pub struct Domain<'a, F> {
    pub tag: String,
    pub features: ArrayView2<'a, F>,
    pub labels: &'a [u32],
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub feature_mode: FeatureMode,
    /// The fitting hyperparameters, captured so that parity across modes can
    /// be checked after the fact.
    pub config: ProbeConfig,
    pub accuracies: Vec<(String, f64)>,
    pub train_loss: Vec<f64>,
}

/// Accuracy on every domain, in order. Every domain must share the probe's
/// label space.
pub fn domain_shift_eval<F: Scalar>(probe: &LinearProbe<F>, domains: &[Domain<'_, F>]) -> Result<Vec<(String, f64)>> {
    domains
        .iter()
        .map(|d| {
            if d.n_classes != probe.n_classes() {
                return Err(Error::invalid(format!(
                    "dataset {:?} has {} classes, probe expects {}",
                    d.tag,
                    d.n_classes,
                    probe.n_classes()
                )));
            }
            Ok((d.tag.clone(), eval_probe(probe, d.features, d.labels)?))
        })
        .collect()
}

#[derive(Serialize)]
struct ProbeRow<'a> {
    feature_mode: &'a str,
    dataset_tag: &'a str,
    accuracy: f64,
}

/// Writes `feature_mode,dataset_tag,accuracy`.
pub fn write_probe_csv(reports: &[ProbeReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in reports {
        for (tag, acc) in &r.accuracies {
            w.serialize(ProbeRow {
                feature_mode: r.feature_mode.as_str(),
                dataset_tag: tag,
                accuracy: *acc,
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `"SAEPRB01"`, u32 version 1, u8 mode, u32 n_classes, u32 feat_dim, then
/// `W` and `b` as little-endian f32.
pub fn write_probe<F: Scalar>(probe: &LinearProbe<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(21 + 4 * (probe.w.len() + probe.b.len()));
    out.extend_from_slice(PROBE_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.push(probe.feature_mode.code());
    out.extend_from_slice(&(probe.n_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(probe.feat_dim() as u32).to_le_bytes());
    for v in probe.w.iter().chain(probe.b.iter()) {
        out.extend_from_slice(&v.narrow().to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_probe<F: Scalar>(path: impl AsRef<Path>) -> Result<LinearProbe<F>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 21 {
        return Err(Error::Truncated {
            section: "header",
            expected: 21,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..8] != PROBE_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(PROBE_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u32_at(8);
    if version != 1 {
        return Err(Error::UnsupportedVersion { what: "probe", version });
    }
    let mode = FeatureMode::from_code(bytes[12])
        .ok_or_else(|| Error::invalid(format!("unknown feature mode code {}", bytes[12])))?;
    let c = u32_at(13) as usize;
    let f = u32_at(17) as usize;
    let expected = 21 + 4 * (c * f + c);
    if bytes.len() < expected {
        return Err(Error::Truncated {
            section: "parameters",
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            count: (bytes.len() - expected) as u64,
        });
    }
    let vals: Vec<F> = bytes[21..]
        .chunks_exact(4)
        .map(|ch| F::widen(f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]])))
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("probe contains non-finite parameters"));
    }
    let w = Array2::from_shape_vec((c, f), vals[..c * f].to_vec()).expect("length checked");
    let b = Array1::from_vec(vals[c * f..].to_vec());
    Ok(LinearProbe {
        w,
        b,
        feature_mode: mode,
    })
}
