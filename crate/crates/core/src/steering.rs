//! Steering directions from decoder columns.
//!
//! A steering vector is a unit-normalized decoder column; `steer` adds `λ` times
//! it to an embedding, so `λ` is comparable across features.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::{decode, encode, SaeArchitecture, SaeParams};
use crate::scalar::Scalar;

pub const STEERING_MAGIC: &[u8; 8] = b"SAESTR01";

/// Suggested λ range written alongside exported vectors.
pub const DEFAULT_LAMBDA_RANGE: (f32, f32) = (0.0, 10.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector<F> {
    pub feature: usize,
    pub direction: Array1<F>,
    /// Checksum of the parameters the direction came from, if known.
    pub source: Option<String>,
    pub lambda_range: (f32, f32),
}

impl<F: Scalar> SteeringVector<F> {
    pub fn d(&self) -> usize {
        self.direction.len()
    }
}

pub fn feature_direction<F: Scalar>(params: &SaeParams<F>, k: usize) -> Result<SteeringVector<F>> {
    if k >= params.n() {
        return Err(Error::invalid(format!("feature {k} out of range (n = {})", params.n())));
    }
    let col = params.w_dec.column(k);
    let norm = col.dot(&col).sqrt();
    if norm == F::zero() || !norm.is_finite() {
        return Err(Error::ZeroColumn { feature: k });
    }
    Ok(SteeringVector {
        feature: k,
        direction: col.mapv(|v| v / norm),
        source: Some(params.checksum()),
        lambda_range: DEFAULT_LAMBDA_RANGE,
    })
}

fn check_dim<F: Scalar>(sv: &SteeringVector<F>, d: usize) -> Result<()> {
    if d != sv.d() {
        return Err(Error::DimMismatch {
            expected: sv.d(),
            found: d,
        });
    }
    Ok(())
}

/// `x + λ·u`.
pub fn steer<F: Scalar>(x: ArrayView1<'_, F>, sv: &SteeringVector<F>, lambda: F) -> Result<Array1<F>> {
    check_dim(sv, x.len())?;
    let mut out = x.to_owned();
    out.scaled_add(lambda, &sv.direction);
    Ok(out)
}

/// `x − λ·u`, for pushing a negative prompt away from the feature.
pub fn steer_negative<F: Scalar>(x: ArrayView1<'_, F>, sv: &SteeringVector<F>, lambda: F) -> Result<Array1<F>> {
    steer(x, sv, -lambda)
}

/// Steers each row (token position) independently. With a mask, only rows
/// whose mask entry is set are moved.
pub fn steer_sequence<F: Scalar>(
    tokens: ArrayView2<'_, F>,
    sv: &SteeringVector<F>,
    lambda: F,
    mask: Option<&[bool]>,
) -> Result<Array2<F>> {
    check_dim(sv, tokens.ncols())?;
    if let Some(m) = mask {
        if m.len() != tokens.nrows() {
            return Err(Error::DimMismatch {
                expected: tokens.nrows(),
                found: m.len(),
            });
        }
    }
    let mut out = tokens.to_owned();
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        if mask.is_none_or(|m| m[t]) {
            row.scaled_add(lambda, &sv.direction);
        }
    }
    Ok(out)
}

/// Alternative steering: encode, set latent `k` to `value`, decode.
pub fn reconstruct_steer<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    x: ArrayView1<'_, F>,
    k: usize,
    value: F,
) -> Result<Array1<F>> {
    if k >= params.n() {
        return Err(Error::invalid(format!("feature {k} out of range (n = {})", params.n())));
    }
    let mut z = encode(params, arch, x)?;
    z[k] = value;
    decode(params, z.view())
}

#[derive(Serialize, Deserialize)]
struct JsonEntry {
    feature: u32,
    direction: Vec<f32>,
    lambda_min: f32,
    lambda_max: f32,
}

#[derive(Serialize, Deserialize)]
struct JsonMirror {
    version: u32,
    d: u32,
    source: Option<String>,
    vectors: Vec<JsonEntry>,
}

/// Exports unit decoder directions for `features`. Writes the binary file at
/// `path` and, when given, a JSON mirror.
///
/// ```text
/// "SAESTR01", u32 version = 1, u32 d, u32 count,
/// count × (u32 feature, d × f32 direction, f32 λ_min, f32 λ_max)
/// ```
pub fn export_steering<F: Scalar>(
    params: &SaeParams<F>,
    features: &[usize],
    path: impl AsRef<Path>,
    json_path: Option<&Path>,
) -> Result<Vec<SteeringVector<F>>> {
    let mut seen = HashSet::new();
    if let Some(dup) = features.iter().find(|&&k| !seen.insert(k)) {
        return Err(Error::invalid(format!("duplicate feature id {dup} in steering export")));
    }
    let vectors = features
        .iter()
        .map(|&k| feature_direction(params, k))
        .collect::<Result<Vec<_>>>()?;
    let d = params.d();
    let mut out = Vec::with_capacity(20 + vectors.len() * (12 + 4 * d));
    out.extend_from_slice(STEERING_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(vectors.len() as u32).to_le_bytes());
    for sv in &vectors {
        out.extend_from_slice(&(sv.feature as u32).to_le_bytes());
        for v in sv.direction.iter() {
            out.extend_from_slice(&v.narrow().to_le_bytes());
        }
        out.extend_from_slice(&sv.lambda_range.0.to_le_bytes());
        out.extend_from_slice(&sv.lambda_range.1.to_le_bytes());
    }
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;

    if let Some(jp) = json_path {
        let mirror = JsonMirror {
            version: 1,
            d: d as u32,
            source: Some(params.checksum()),
            vectors: vectors
                .iter()
                .map(|sv| JsonEntry {
                    feature: sv.feature as u32,
                    direction: sv.direction.iter().map(|v| v.narrow()).collect(),
                    lambda_min: sv.lambda_range.0,
                    lambda_max: sv.lambda_range.1,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&mirror)?;
        std::fs::write(jp, text + "\n").map_err(|e| Error::io(jp, e))?;
    }
    Ok(vectors)
}

pub fn import_steering<F: Scalar>(path: impl AsRef<Path>) -> Result<Vec<SteeringVector<F>>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = |section, expected: usize| Error::Truncated {
        section,
        expected: expected as u64,
        actual: bytes.len() as u64,
    };
    if bytes.len() < 20 {
        return Err(truncated("header", 20));
    }
    if &bytes[..8] != STEERING_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(STEERING_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let f32_at = |o: usize| f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u32_at(8);
    if version != 1 {
        return Err(Error::UnsupportedVersion {
            what: "steering",
            version,
        });
    }
    let d = u32_at(12) as usize;
    let count = u32_at(16) as usize;
    let entry = 12 + 4 * d;
    let expected = 20 + count * entry;
    if bytes.len() < expected {
        return Err(truncated("entries", expected));
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            count: (bytes.len() - expected) as u64,
        });
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let base = 20 + i * entry;
        let direction: Array1<F> = (0..d).map(|j| F::widen(f32_at(base + 4 + 4 * j))).collect();
        if direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("steering entry {i} is not finite")));
        }
        out.push(SteeringVector {
            feature: u32_at(base) as usize,
            direction,
            source: None,
            lambda_range: (f32_at(base + 4 + 4 * d), f32_at(base + 8 + 4 * d)),
        });
    }
    Ok(out)
}
