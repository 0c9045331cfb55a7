//! Binary SAE checkpoints.
//!
//! ```text
//! "SAEPRM01"   magic
//! version      u32 (1; 2 when a flags byte follows the sparsity field)
//! kind         u8 (0 relu, 1 topk, 2 gated)
//! d, n         u32, u32
//! sparsity     f32 λ or u32 k
//! flags        u8, version 2 only (bit 0 topk_use_bias, bit 1 tie_gate_weights)
//! blocks       W_enc, b_enc, W_dec, b_dec[, W_gate, b_gate, W_mag, b_mag], f32 row-major
//! ```

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{GateParams, SaeArchitecture, SaeKind, SaeParams, Sparsity};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAEPRM01";

/// A decoded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub arch: SaeArchitecture,
    pub params: SaeParams<F>,
}

fn flags(arch: &SaeArchitecture) -> u8 {
    u8::from(arch.topk_use_bias) | (u8::from(arch.tie_gate_weights) << 1)
}

pub(crate) fn encode_checkpoint<F: Scalar>(arch: &SaeArchitecture, params: &SaeParams<F>) -> Result<Vec<u8>> {
    arch.validate(params.n())?;
    if (arch.kind == SaeKind::Gated) != params.gate.is_some() {
        return Err(Error::invalid("gate parameters must be present exactly for gated SAEs"));
    }
    let fl = flags(arch);
    let version: u32 = if fl == 0 { 1 } else { 2 };
    let mut out = Vec::with_capacity(32 + params.num_parameters() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.push(arch.kind.code());
    out.extend_from_slice(&(params.d() as u32).to_le_bytes());
    out.extend_from_slice(&(params.n() as u32).to_le_bytes());
    match arch.sparsity {
        Sparsity::Lambda(l) => out.extend_from_slice(&(l as f32).to_le_bytes()),
        Sparsity::K(k) => out.extend_from_slice(&(k as u32).to_le_bytes()),
    }
    if version == 2 {
        out.push(fl);
    }
    for block in params.blocks() {
        for v in block {
            out.extend_from_slice(&v.narrow().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_checkpoint<F: Scalar>(
    arch: &SaeArchitecture,
    params: &SaeParams<F>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(arch, params)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<F>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub(crate) fn decode_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8, "header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32("header")?;
    if version != 1 && version != 2 {
        return Err(Error::UnsupportedVersion {
            what: "checkpoint",
            version,
        });
    }
    let kind_code = r.u8("header")?;
    let kind =
        SaeKind::from_code(kind_code).ok_or_else(|| Error::invalid(format!("unknown SAE kind code {kind_code}")))?;
    let d = r.u32("header")? as usize;
    let n = r.u32("header")? as usize;
    let raw = r.take(4, "header")?;
    let raw = [raw[0], raw[1], raw[2], raw[3]];
    let sparsity = match kind {
        SaeKind::TopK => Sparsity::K(u32::from_le_bytes(raw) as usize),
        _ => Sparsity::Lambda(f32::from_le_bytes(raw) as f64),
    };
    let fl = if version == 2 { r.u8("header")? } else { 0 };
    let arch = SaeArchitecture {
        kind,
        sparsity,
        topk_use_bias: fl & 1 != 0,
        tie_gate_weights: fl & 2 != 0,
    };
    if d == 0 || n == 0 {
        return Err(Error::invalid("checkpoint dimensions must be nonzero"));
    }
    arch.validate(n)?;

    let w_enc = r.matrix::<F>(n, d)?;
    let b_enc = r.vector::<F>(n)?;
    let w_dec = r.matrix::<F>(d, n)?;
    let b_dec = r.vector::<F>(d)?;
    let gate = if kind == SaeKind::Gated {
        Some(GateParams {
            w_gate: r.matrix(n, d)?,
            b_gate: r.vector(n)?,
            w_mag: r.matrix(n, d)?,
            b_mag: r.vector(n)?,
        })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::TrailingBytes {
            count: (bytes.len() - r.pos) as u64,
        });
    }
    let params = SaeParams {
        w_enc,
        b_enc,
        w_dec,
        b_dec,
        gate,
    };
    if !params.is_finite() {
        return Err(Error::invalid("checkpoint contains non-finite parameters"));
    }
    Ok(Checkpoint { arch, params })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() < self.pos + len {
            return Err(Error::Truncated {
                section,
                expected: (self.pos + len) as u64,
                actual: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn floats<F: Scalar>(&mut self, count: usize) -> Result<Vec<F>> {
        let b = self.take(count * 4, "parameters")?;
        Ok(b.chunks_exact(4)
            .map(|c| F::widen(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }

    fn matrix<F: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Array2<F>> {
        let v = self.floats(rows * cols)?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("shape matches length"))
    }

    fn vector<F: Scalar>(&mut self, len: usize) -> Result<Array1<F>> {
        Ok(Array1::from_vec(self.floats(len)?))
    }
}
