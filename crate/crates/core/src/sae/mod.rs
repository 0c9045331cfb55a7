//! Sparse autoencoder parameterizations: ReLU, TopK and Gated.
//!
//! ```text
//! relu:   z = ReLU(W_enc x + b_enc)
//! topk:   z = TopK(W_enc x)
//! gated:  z = 1[W_gate (x - b_dec) + b_gate > 0] ⊙ ReLU(W_mag (x - b_dec) + b_mag)
//! decode: x̂ = W_dec z + b_dec
//! ```

mod checkpoint;
mod forward;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use forward::{
    decode, decode_batch, encode, encode_batch, forward_batch, grad, grad_with_forward, loss, pre_activations,
    topk_select, topk_select_in_place, Forward, LossBreakdown,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaeKind {
    Relu,
    #[serde(rename = "topk")]
    TopK,
    Gated,
}

impl SaeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SaeKind::Relu => "relu",
            SaeKind::TopK => "topk",
            SaeKind::Gated => "gated",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            SaeKind::Relu => 0,
            SaeKind::TopK => 1,
            SaeKind::Gated => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SaeKind::Relu),
            1 => Some(SaeKind::TopK),
            2 => Some(SaeKind::Gated),
            _ => None,
        }
    }
}

impl std::fmt::Display for SaeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SaeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(SaeKind::Relu),
            "topk" => Ok(SaeKind::TopK),
            "gated" => Ok(SaeKind::Gated),
            other => Err(Error::invalid(format!("unknown SAE architecture {other:?}"))),
        }
    }
}

/// Which sparsity knob an architecture uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sparsity {
    /// L1 coefficient (ReLU and Gated).
    Lambda(f64),
    /// Number of kept latents (TopK).
    K(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaeArchitecture {
    pub kind: SaeKind,
    pub sparsity: Sparsity,
    /// TopK only: add `b_enc` and a ReLU before selection.
    #[serde(default)]
    pub topk_use_bias: bool,
    /// Gated only: share one matrix between the gate and magnitude paths.
    #[serde(default)]
    pub tie_gate_weights: bool,
}

impl SaeArchitecture {
    pub fn relu(lambda: f64) -> Self {
        Self::with(SaeKind::Relu, Sparsity::Lambda(lambda))
    }

    pub fn topk(k: usize) -> Self {
        Self::with(SaeKind::TopK, Sparsity::K(k))
    }

    pub fn gated(lambda: f64) -> Self {
        Self::with(SaeKind::Gated, Sparsity::Lambda(lambda))
    }

    fn with(kind: SaeKind, sparsity: Sparsity) -> Self {
        SaeArchitecture {
            kind,
            sparsity,
            topk_use_bias: false,
            tie_gate_weights: false,
        }
    }

    /// λ for L1 architectures, 0 for TopK.
    pub fn lambda(&self) -> f64 {
        match self.sparsity {
            Sparsity::Lambda(l) => l,
            Sparsity::K(_) => 0.0,
        }
    }

    pub fn k(&self) -> Option<usize> {
        match self.sparsity {
            Sparsity::K(k) => Some(k),
            Sparsity::Lambda(_) => None,
        }
    }

    /// Checks the architecture against a latent width `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        match (self.kind, self.sparsity) {
            (SaeKind::TopK, Sparsity::K(k)) => {
                if k == 0 || k > n {
                    return Err(Error::invalid(format!("k = {k} must satisfy 1 ≤ k ≤ n = {n}")));
                }
            }
            (SaeKind::Relu | SaeKind::Gated, Sparsity::Lambda(l)) => {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(Error::invalid(format!("lambda = {l} must be a finite value ≥ 0")));
                }
            }
            (kind, s) => {
                return Err(Error::invalid(format!("{kind} SAE cannot use sparsity setting {s:?}")));
            }
        }
        if self.topk_use_bias && self.kind != SaeKind::TopK {
            return Err(Error::invalid("topk_use_bias only applies to topk"));
        }
        if self.tie_gate_weights && self.kind != SaeKind::Gated {
            return Err(Error::invalid("tie_gate_weights only applies to gated"));
        }
        Ok(())
    }

    /// Decoder columns are renormalized after each optimizer step for the
    /// L1-penalized variants.
    pub fn normalizes_decoder(&self) -> bool {
        matches!(self.kind, SaeKind::Relu | SaeKind::Gated)
    }
}

/// Extra parameters of the Gated variant.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<F> {
    pub w_gate: Array2<F>,
    pub b_gate: Array1<F>,
    pub w_mag: Array2<F>,
    pub b_mag: Array1<F>,
}

/// Encoder/decoder weights. `w_enc` is `n × d`, `w_dec` is `d × n`.
///
/// The Gated variant encodes through `gate` only; its `w_enc`/`b_enc` blocks
/// are carried for the checkpoint layout and receive zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams<F> {
    pub w_enc: Array2<F>,
    pub b_enc: Array1<F>,
    pub w_dec: Array2<F>,
    pub b_dec: Array1<F>,
    pub gate: Option<GateParams<F>>,
}

/// Gradients share the parameter layout.
pub type ParamGrads<F> = SaeParams<F>;

impl<F: Scalar> SaeParams<F> {
    /// Input width.
    pub fn d(&self) -> usize {
        self.w_enc.ncols()
    }

    /// Latent width.
    pub fn n(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        SaeParams {
            w_enc: Array2::zeros(self.w_enc.raw_dim()),
            b_enc: Array1::zeros(self.b_enc.raw_dim()),
            w_dec: Array2::zeros(self.w_dec.raw_dim()),
            b_dec: Array1::zeros(self.b_dec.raw_dim()),
            gate: self.gate.as_ref().map(|g| GateParams {
                w_gate: Array2::zeros(g.w_gate.raw_dim()),
                b_gate: Array1::zeros(g.b_gate.raw_dim()),
                w_mag: Array2::zeros(g.w_mag.raw_dim()),
                b_mag: Array1::zeros(g.b_mag.raw_dim()),
            }),
        }
    }

    /// Parameter blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = vec![
            self.w_enc.as_slice().expect("standard layout"),
            self.b_enc.as_slice().expect("standard layout"),
            self.w_dec.as_slice().expect("standard layout"),
            self.b_dec.as_slice().expect("standard layout"),
        ];
        if let Some(g) = &self.gate {
            out.extend([
                g.w_gate.as_slice().expect("standard layout"),
                g.b_gate.as_slice().expect("standard layout"),
                g.w_mag.as_slice().expect("standard layout"),
                g.b_mag.as_slice().expect("standard layout"),
            ]);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = vec![
            self.w_enc.as_slice_mut().expect("standard layout"),
            self.b_enc.as_slice_mut().expect("standard layout"),
            self.w_dec.as_slice_mut().expect("standard layout"),
            self.b_dec.as_slice_mut().expect("standard layout"),
        ];
        if let Some(g) = &mut self.gate {
            out.extend([
                g.w_gate.as_slice_mut().expect("standard layout"),
                g.b_gate.as_slice_mut().expect("standard layout"),
                g.w_mag.as_slice_mut().expect("standard layout"),
                g.b_mag.as_slice_mut().expect("standard layout"),
            ]);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Converts to another working precision.
    pub fn cast<G: Scalar>(&self) -> SaeParams<G> {
        let c2 = |a: &Array2<F>| a.mapv(|v| G::lit(v.as_f64()));
        let c1 = |a: &Array1<F>| a.mapv(|v| G::lit(v.as_f64()));
        SaeParams {
            w_enc: c2(&self.w_enc),
            b_enc: c1(&self.b_enc),
            w_dec: c2(&self.w_dec),
            b_dec: c1(&self.b_dec),
            gate: self.gate.as_ref().map(|g| GateParams {
                w_gate: c2(&g.w_gate),
                b_gate: c1(&g.b_gate),
                w_mag: c2(&g.w_mag),
                b_mag: c1(&g.b_mag),
            }),
        }
    }

    /// SHA-256 over the f32 little-endian encoding of every block.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for block in self.blocks() {
            for v in block {
                h.update(v.narrow().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Random initialization.
///
/// `W_enc` entries are uniform in `[-1/√d, 1/√d]`; `W_dec` is `W_encᵀ` with
/// unit-norm columns; all encoder-side biases are zero; `b_dec` is `data_mean`
/// when given. Gated gate and magnitude matrices start as copies of `W_enc`.
pub fn init_params<F: Scalar>(
    arch: &SaeArchitecture,
    d: usize,
    expansion: usize,
    seed: u64,
    data_mean: Option<&Array1<F>>,
) -> Result<SaeParams<F>> {
    if d == 0 {
        return Err(Error::invalid("input dimension d must be ≥ 1"));
    }
    if expansion == 0 {
        return Err(Error::invalid("expansion factor must be ≥ 1"));
    }
    let n = d * expansion;
    arch.validate(n)?;
    let b_dec = match data_mean {
        Some(m) if m.len() != d => {
            return Err(Error::DimMismatch {
                expected: d,
                found: m.len(),
            })
        }
        Some(m) => m.clone(),
        None => Array1::zeros(d),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d as f64).sqrt();
    let w_enc = Array2::from_shape_simple_fn((n, d), || F::lit(rng.gen_range(-bound..=bound)));
    let mut w_dec = w_enc.t().as_standard_layout().into_owned();
    normalize_columns(&mut w_dec)?;
    let gate = (arch.kind == SaeKind::Gated).then(|| GateParams {
        w_gate: w_enc.clone(),
        b_gate: Array1::zeros(n),
        w_mag: w_enc.clone(),
        b_mag: Array1::zeros(n),
    });
    Ok(SaeParams {
        w_enc,
        b_enc: Array1::zeros(n),
        w_dec,
        b_dec,
        gate,
    })
}

fn normalize_columns<F: Scalar>(w: &mut Array2<F>) -> Result<()> {
    let norms: Vec<F> = w
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|&v| v * v).sum::<F>().sqrt())
        .collect();
    if let Some(j) = norms.iter().position(|&nrm| nrm == F::zero() || !nrm.is_finite()) {
        return Err(Error::ZeroColumn { feature: j });
    }
    for (mut col, &nrm) in w.columns_mut().into_iter().zip(&norms) {
        col.mapv_inplace(|v| v / nrm);
    }
    Ok(())
}

/// Scales every decoder column to unit L2 norm. Fails without modifying
/// anything if a column is zero.
pub fn normalize_decoder<F: Scalar>(params: &mut SaeParams<F>) -> Result<()> {
    normalize_columns(&mut params.w_dec)
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Sae<F> {
    pub arch: SaeArchitecture,
    pub params: SaeParams<F>,
}

impl<F: Scalar> Sae<F> {
    pub fn new(arch: SaeArchitecture, params: SaeParams<F>) -> Result<Self> {
        arch.validate(params.n())?;
        if (arch.kind == SaeKind::Gated) != params.gate.is_some() {
            return Err(Error::invalid("gate parameters must be present exactly for gated SAEs"));
        }
        Ok(Sae { arch, params })
    }

    pub fn d(&self) -> usize {
        self.params.d()
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn encode_batch(&self, x: ndarray::ArrayView2<'_, F>) -> Result<Array2<F>> {
        encode_batch(&self.params, &self.arch, x)
    }

    pub fn forward(&self, x: ndarray::ArrayView2<'_, F>) -> Result<Forward<F>> {
        forward_batch(&self.params, &self.arch, x)
    }
}
