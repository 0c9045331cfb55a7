//! Token-level and cross-run feature diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-token latent activations for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenActivations<F> {
    pub tokens: Vec<String>,
    /// `T × n`.
    pub activations: ndarray::Array2<F>,
}

impl<F: Scalar> TokenActivations<F> {
    pub fn new(tokens: Vec<String>, activations: ndarray::Array2<F>) -> Result<Self> {
        if tokens.len() != activations.nrows() {
            return Err(Error::DimMismatch {
                expected: tokens.len(),
                found: activations.nrows(),
            });
        }
        if activations.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("token activations must be finite"));
        }
        Ok(TokenActivations { tokens, activations })
    }
}

/// Tokens ranked by activation of feature `k`, descending, ties by position.
/// Tokens where the feature is zero are left out.
pub fn top_activating_tokens<F: Scalar>(ta: &TokenActivations<F>, k: usize, top_n: usize) -> Result<Vec<(String, F)>> {
    if k >= ta.activations.ncols() {
        return Err(Error::invalid(format!(
            "feature {k} out of range (n = {})",
            ta.activations.ncols()
        )));
    }
    if top_n == 0 {
        return Err(Error::invalid("top_n must be ≥ 1"));
    }
    let col = ta.activations.column(k);
    let mut ranked: Vec<(usize, F)> = col
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != F::zero())
        .map(|(i, &v)| (i, v))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    Ok(ranked.into_iter().map(|(i, v)| (ta.tokens[i].clone(), v)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Max,
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::invalid(format!(
                "unknown pooling {other:?} (expected max or mean)"
            ))),
        }
    }
}

/// Pools a `T × n` activation matrix over positions.
pub fn pool<F: Scalar>(acts: ArrayView2<'_, F>, pooling: Pooling) -> Result<Array1<F>> {
    if acts.nrows() == 0 {
        return Err(Error::invalid("cannot pool zero positions"));
    }
    Ok(match pooling {
        Pooling::Max => acts.fold_axis(Axis(0), F::neg_infinity(), |&a, &b| a.max(b)),
        Pooling::Mean => acts.mean_axis(Axis(0)).expect("nonempty"),
    })
}

/// The `⌈fraction·n⌉` features with the largest activation, ties toward the
/// lowest id. Returned sorted by id.
pub fn top_fraction_features<F: Scalar>(acts: ArrayView1<'_, F>, fraction: f64) -> Result<BTreeSet<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} must lie in (0, 1]")));
    }
    let n = acts.len();
    let count = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| acts[b].partial_cmp(&acts[a]).expect("finite").then(a.cmp(&b)));
    Ok(order.into_iter().take(count).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapResult {
    pub top_fraction: f64,
    pub n: usize,
    pub jaccard: f64,
    pub intersection: usize,
    pub a_size: usize,
    pub b_size: usize,
    #[serde(skip)]
    pub set_a: BTreeSet<usize>,
    #[serde(skip)]
    pub set_b: BTreeSet<usize>,
}

/// Jaccard overlap of the top-fraction feature sets of two pooled
/// activation vectors.
pub fn feature_overlap<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>, fraction: f64) -> Result<OverlapResult> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let set_a = top_fraction_features(a, fraction)?;
    let set_b = top_fraction_features(b, fraction)?;
    let intersection = set_a.intersection(&set_b).count();
    let union = set_a.union(&set_b).count();
    Ok(OverlapResult {
        top_fraction: fraction,
        n: a.len(),
        jaccard: if union == 0 {
            1.0
        } else {
            intersection as f64 / union as f64
        },
        intersection,
        a_size: set_a.len(),
        b_size: set_b.len(),
        set_a,
        set_b,
    })
}

/// [`feature_overlap`] on `T × n` matrices, pooling each first.
pub fn feature_overlap_pooled<F: Scalar>(
    a: ArrayView2<'_, F>,
    b: ArrayView2<'_, F>,
    fraction: f64,
    pooling: Pooling,
) -> Result<OverlapResult> {
    feature_overlap(pool(a, pooling)?.view(), pool(b, pooling)?.view(), fraction)
}

pub fn write_overlap_json(result: &OverlapResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(result)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Keywords ranked by `ln(N / df)`, descending, ties alphabetical. Keywords
/// are case-folded and counted once per document.
pub fn idf_keyword_rank<S: AsRef<str>>(docs: &[Vec<S>]) -> Result<Vec<(String, f64)>> {
    if docs.is_empty() {
        return Err(Error::invalid("idf needs at least one document"));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let words: BTreeSet<String> = doc.iter().map(|w| w.as_ref().to_lowercase()).collect();
        for w in words {
            *df.entry(w).or_default() += 1;
        }
    }
    let n = docs.len() as f64;
    let mut ranked: Vec<(String, f64)> = df.into_iter().map(|(w, c)| (w, (n / c as f64).ln())).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}
