//! Activation dataset storage.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! "SAEACT01"            8 bytes magic
//! version               u32 (= 1)
//! n_samples             u64
//! dim                   u32
//! has_labels            u8 (0/1)
//! n_classes             u32 (0 if unlabeled)
//! meta_len              u32
//! meta                  meta_len bytes of UTF-8 JSON
//! payload               n_samples * dim f32, row-major
//! labels                n_samples u32 (only if has_labels)
//! ```
//!
//! Trailing bytes are rejected. Files are memory-mapped on open, so rows are
//! paged in on demand.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use memmap2::Mmap;
use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DATASET_MAGIC: &[u8; 8] = b"SAEACT01";
pub const DATASET_VERSION: u32 = 1;
const FIXED_HEADER_LEN: usize = 8 + 4 + 8 + 4 + 1 + 4 + 4;

/// Free-form provenance stored as JSON in the file header.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetMeta {
    pub source_model: String,
    pub layer_tag: String,
    pub n_classes: usize,
    pub notes: String,
}

impl DatasetMeta {
    pub fn synthetic(notes: impl Into<String>) -> Self {
        DatasetMeta {
            source_model: "synthetic".into(),
            layer_tag: String::new(),
            n_classes: 0,
            notes: notes.into(),
        }
    }
}

enum RowStorage {
    Owned(Vec<f32>),
    Mapped { map: Mmap, offset: usize },
}

/// An immutable matrix of activation rows with optional class labels.
pub struct ActivationDataset {
    n_samples: usize,
    dim: usize,
    n_classes: usize,
    meta: DatasetMeta,
    rows: RowStorage,
    labels: Option<Vec<u32>>,
}

impl std::fmt::Debug for ActivationDataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActivationDataset")
            .field("n_samples", &self.n_samples)
            .field("dim", &self.dim)
            .field("n_classes", &self.n_classes)
            .field("has_labels", &self.labels.is_some())
            .field("meta", &self.meta)
            .finish()
    }
}

fn validate_labels(labels: &[u32], n_samples: usize, n_classes: usize) -> Result<()> {
    if labels.len() != n_samples {
        return Err(Error::invalid(format!(
            "label count {} does not match n_samples {}",
            labels.len(),
            n_samples
        )));
    }
    if n_classes == 0 {
        return Err(Error::invalid("n_classes must be >= 1 when labels are present"));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= n_classes) {
        return Err(Error::invalid(format!(
            "label {l} at row {i} is outside [0, {n_classes})"
        )));
    }
    Ok(())
}

impl ActivationDataset {
    /// Builds an in-memory dataset. Values are narrowed to `f32`, the storage
    /// precision. When labels are given and `meta.n_classes` is 0, the class
    /// count is inferred as `max(label) + 1`.
    pub fn from_rows<F: Scalar>(
        rows: ArrayView2<'_, F>,
        labels: Option<Vec<u32>>,
        mut meta: DatasetMeta,
    ) -> Result<Self> {
        let (n_samples, dim) = rows.dim();
        if n_samples == 0 {
            return Err(Error::invalid("n_samples must be ≥ 1"));
        }
        if dim == 0 {
            return Err(Error::invalid("dim must be ≥ 1"));
        }
        let mut data = Vec::with_capacity(n_samples * dim);
        for (i, row) in rows.outer_iter().enumerate() {
            for &v in row.iter() {
                let v = v.narrow();
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i });
                }
                data.push(v);
            }
        }
        let n_classes = match &labels {
            Some(l) => {
                if meta.n_classes == 0 {
                    meta.n_classes = l.iter().max().map_or(0, |&m| m as usize + 1);
                }
                validate_labels(l, n_samples, meta.n_classes)?;
                meta.n_classes
            }
            None => 0,
        };
        meta.n_classes = n_classes;
        Ok(ActivationDataset {
            n_samples,
            dim,
            n_classes,
            meta,
            rows: RowStorage::Owned(data),
            labels,
        })
    }

    /// Memory-maps and validates an activation file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        // SAFETY: the mapping is read-only and the file is treated as immutable
        // for the lifetime of the dataset.
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
        Self::parse(map)
    }

    fn parse(map: Mmap) -> Result<Self> {
        let bytes: &[u8] = &map;
        let total = bytes.len() as u64;
        if bytes.len() < 8 || &bytes[..8] != DATASET_MAGIC {
            let found = &bytes[..bytes.len().min(8)];
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(Error::Truncated {
                section: "header",
                expected: FIXED_HEADER_LEN as u64,
                actual: total,
            });
        }
        let mut cur = Cursor::new(&bytes[8..]);
        let version = cur.u32();
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "activation file",
                version,
            });
        }
        let n_samples = cur.u64() as usize;
        let dim = cur.u32() as usize;
        let has_labels = cur.u8();
        let n_classes = cur.u32() as usize;
        let meta_len = cur.u32() as usize;
        if n_samples == 0 {
            return Err(Error::invalid("n_samples must be ≥ 1"));
        }
        if dim == 0 {
            return Err(Error::invalid("dim must be ≥ 1"));
        }
        if has_labels > 1 {
            return Err(Error::invalid(format!("has_labels flag {has_labels} is not 0/1")));
        }
        let meta_end = FIXED_HEADER_LEN as u64 + meta_len as u64;
        if total < meta_end {
            return Err(Error::Truncated {
                section: "metadata",
                expected: meta_end,
                actual: total,
            });
        }
        let meta_bytes = &bytes[FIXED_HEADER_LEN..meta_end as usize];
        let mut meta: DatasetMeta = if meta_len == 0 {
            DatasetMeta::default()
        } else {
            serde_json::from_slice(meta_bytes)?
        };
        let payload_len = (n_samples as u64)
            .checked_mul(dim as u64)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::invalid("payload size overflows"))?;
        let payload_end = meta_end + payload_len;
        if total < payload_end {
            return Err(Error::Truncated {
                section: "payload",
                expected: payload_len,
                actual: total - meta_end,
            });
        }
        let labels_len = if has_labels == 1 { n_samples as u64 * 4 } else { 0 };
        let end = payload_end + labels_len;
        if total < end {
            return Err(Error::Truncated {
                section: "labels",
                expected: labels_len,
                actual: total - payload_end,
            });
        }
        if total > end {
            return Err(Error::TrailingBytes { count: total - end });
        }

        let offset = meta_end as usize;
        for (row, chunk) in bytes[offset..payload_end as usize].chunks_exact(dim * 4).enumerate() {
            if chunk
                .chunks_exact(4)
                .any(|b| !f32::from_le_bytes([b[0], b[1], b[2], b[3]]).is_finite())
            {
                return Err(Error::NonFinite { row });
            }
        }
        let labels = if has_labels == 1 {
            let l: Vec<u32> = bytes[payload_end as usize..end as usize]
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            validate_labels(&l, n_samples, n_classes)?;
            Some(l)
        } else {
            None
        };
        meta.n_classes = if labels.is_some() { n_classes } else { 0 };
        Ok(ActivationDataset {
            n_samples,
            dim,
            n_classes: meta.n_classes,
            meta,
            rows: RowStorage::Mapped { map, offset },
            labels,
        })
    }

    /// Writes this dataset in the activation file format.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let meta = serde_json::to_vec(&self.meta).map_err(std::io::Error::other)?;
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_samples as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&[u8::from(self.labels.is_some())])?;
        w.write_all(&(self.n_classes as u32).to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        match &self.rows {
            RowStorage::Owned(data) => {
                for v in data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            RowStorage::Mapped { map, offset } => {
                let len = self.n_samples * self.dim * 4;
                w.write_all(&map[*offset..*offset + len])?;
            }
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                w.write_all(&l.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    /// Stored (f32) value at `(row, col)`.
    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f32 {
        debug_assert!(row < self.n_samples && col < self.dim);
        let idx = row * self.dim + col;
        match &self.rows {
            RowStorage::Owned(data) => data[idx],
            RowStorage::Mapped { map, offset } => {
                let at = offset + idx * 4;
                f32::from_le_bytes([map[at], map[at + 1], map[at + 2], map[at + 3]])
            }
        }
    }

    /// Copies row `row` into `out`, widening to the working precision.
    pub fn row_into<F: Scalar>(&self, row: usize, out: &mut [F]) {
        assert_eq!(out.len(), self.dim, "row buffer has wrong length");
        match &self.rows {
            RowStorage::Owned(data) => {
                let src = &data[row * self.dim..(row + 1) * self.dim];
                for (o, &v) in out.iter_mut().zip(src) {
                    *o = F::widen(v);
                }
            }
            RowStorage::Mapped { map, offset } => {
                let start = offset + row * self.dim * 4;
                let src = &map[start..start + self.dim * 4];
                for (o, b) in out.iter_mut().zip(src.chunks_exact(4)) {
                    *o = F::widen(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
                }
            }
        }
    }

    pub fn row<F: Scalar>(&self, row: usize) -> Array1<F> {
        let mut out = Array1::zeros(self.dim);
        self.row_into(row, out.as_slice_mut().expect("contiguous"));
        out
    }

    /// Gathers the given rows into a dense matrix.
    pub fn gather<F: Scalar>(&self, indices: &[usize]) -> Array2<F> {
        let mut out = Array2::zeros((indices.len(), self.dim));
        for (mut dst, &i) in out.outer_iter_mut().zip(indices) {
            self.row_into(i, dst.as_slice_mut().expect("contiguous"));
        }
        out
    }

    /// All rows as a dense matrix.
    pub fn to_array<F: Scalar>(&self) -> Array2<F> {
        let idx: Vec<usize> = (0..self.n_samples).collect();
        self.gather(&idx)
    }

    /// A view over every row, in order.
    pub fn view(&self) -> DatasetView<'_> {
        DatasetView {
            data: self,
            indices: (0..self.n_samples).collect(),
        }
    }

    /// A view over the given rows. Indices must be in range.
    pub fn subset(&self, indices: Vec<usize>) -> Result<DatasetView<'_>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_samples) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for {} rows",
                self.n_samples
            )));
        }
        Ok(DatasetView { data: self, indices })
    }
}

/// Writes `rows` (and optional labels) to `path` in the activation file format.
pub fn write_dataset<F: Scalar>(
    rows: ArrayView2<'_, F>,
    labels: Option<&[u32]>,
    meta: &DatasetMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let ds = ActivationDataset::from_rows(rows, labels.map(<[u32]>::to_vec), meta.clone())?;
    ds.write(path)
}

pub fn open_dataset(path: impl AsRef<Path>) -> Result<ActivationDataset> {
    ActivationDataset::open(path)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
}

/// A subset of a dataset's rows, identified by index.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    data: &'a ActivationDataset,
    indices: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn dataset(&self) -> &'a ActivationDataset {
        self.data
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim
    }

    pub fn label(&self, pos: usize) -> Option<u32> {
        self.data.labels.as_ref().map(|l| l[self.indices[pos]])
    }

    pub fn to_array<F: Scalar>(&self) -> Array2<F> {
        self.data.gather(&self.indices)
    }

    pub fn labels(&self) -> Option<Vec<u32>> {
        self.data
            .labels
            .as_ref()
            .map(|l| self.indices.iter().map(|&i| l[i]).collect())
    }

    /// Splits into (train, val) views. The validation part holds
    /// `round(val_fraction * len)` rows chosen by a seeded permutation; both
    /// parts are returned in ascending index order.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(DatasetView<'a>, DatasetView<'a>)> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "val_fraction {val_fraction} must lie strictly between 0 and 1"
            )));
        }
        let mut perm = self.indices.clone();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (val_fraction * self.len() as f64).round() as usize;
        let mut val = perm[..n_val].to_vec();
        let mut train = perm[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Ok((
            DatasetView {
                data: self.data,
                indices: train,
            },
            DatasetView {
                data: self.data,
                indices: val,
            },
        ))
    }

    /// Iterates one epoch of batches. With a seed the row order is a seeded
    /// Fisher–Yates permutation; without, rows come in view order. The last
    /// batch may be short.
    pub fn batches<F: Scalar>(&self, batch_size: usize, shuffle_seed: Option<u64>) -> BatchIter<'a, F> {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        let mut order = self.indices.clone();
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        BatchIter {
            data: self.data,
            order,
            batch_size,
            pos: 0,
            _marker: std::marker::PhantomData,
        }
    }
}

pub fn split<'a>(
    dataset: &'a ActivationDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(DatasetView<'a>, DatasetView<'a>)> {
    dataset.view().split(val_fraction, seed)
}

pub fn batch_iter<F: Scalar>(
    dataset: &ActivationDataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> BatchIter<'_, F> {
    dataset.view().batches(batch_size, shuffle_seed)
}

/// A self-contained minibatch. Owns its data, so it can cross threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub rows: Array2<F>,
    pub labels: Option<Vec<u32>>,
    pub indices: Vec<usize>,
}

impl<F: Scalar> Batch<F> {
    pub fn from_rows(rows: Array2<F>) -> Self {
        let indices = (0..rows.nrows()).collect();
        Batch {
            rows,
            labels: None,
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

pub struct BatchIter<'a, F> {
    data: &'a ActivationDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> Iterator for BatchIter<'_, F> {
    type Item = Batch<F>;

    fn next(&mut self) -> Option<Batch<F>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let rows = self.data.gather(&indices);
        let labels = self
            .data
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Some(Batch { rows, labels, indices })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl<F: Scalar> ExactSizeIterator for BatchIter<'_, F> {}

/// Per-dimension mean, computed in one streaming pass.
pub fn dataset_mean<F: Scalar>(view: &DatasetView<'_>) -> Result<Array1<F>> {
    Ok(running_moments(view)?.0)
}

/// Per-dimension mean and population standard deviation (Welford updates).
pub fn dataset_stats<F: Scalar>(view: &DatasetView<'_>) -> Result<(Array1<F>, Array1<F>)> {
    if view.len() < 2 {
        return Err(Error::invalid(format!(
            "standard deviation needs at least 2 rows, found {}",
            view.len()
        )));
    }
    let (mean, m2) = running_moments::<F>(view)?;
    let n = F::lit(view.len() as f64);
    let std = m2.mapv(|v| (v / n).sqrt());
    Ok((mean, std))
}

fn running_moments<F: Scalar>(view: &DatasetView<'_>) -> Result<(Array1<F>, Array1<F>)> {
    if view.is_empty() {
        return Err(Error::invalid("cannot compute statistics of an empty view"));
    }
    let d = view.dim();
    let mut mean = Array1::<F>::zeros(d);
    let mut m2 = Array1::<F>::zeros(d);
    let mut row = vec![F::zero(); d];
    for (count, &i) in view.indices().iter().enumerate() {
        view.dataset().row_into(i, &mut row);
        let k = F::lit((count + 1) as f64);
        for j in 0..d {
            let delta = row[j] - mean[j];
            mean[j] += delta / k;
            m2[j] += delta * (row[j] - mean[j]);
        }
    }
    Ok((mean, m2))
}
