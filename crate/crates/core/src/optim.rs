//! Bias-corrected Adam over flat parameter blocks.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Anything whose parameters can be viewed as a fixed list of flat blocks.
pub trait ParamBlocks<F> {
    fn blocks(&self) -> Vec<&[F]>;
    fn blocks_mut(&mut self) -> Vec<&mut [F]>;
}

impl<F: Scalar> ParamBlocks<F> for crate::sae::SaeParams<F> {
    fn blocks(&self) -> Vec<&[F]> {
        crate::sae::SaeParams::blocks(self)
    }
    fn blocks_mut(&mut self) -> Vec<&mut [F]> {
        crate::sae::SaeParams::blocks_mut(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one vector per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new<P: ParamBlocks<F>>(params: &P) -> Self {
        let zeros = |b: &[F]| vec![F::zero(); b.len()];
        let blocks = params.blocks();
        AdamState {
            m: blocks.iter().map(|b| zeros(b)).collect(),
            v: blocks.iter().map(|b| zeros(b)).collect(),
            t: 0,
        }
    }
}

/// One Adam update with step size `lr`:
///
/// ```text
/// m ← β₁m + (1−β₁)g      v ← β₂v + (1−β₂)g²
/// p ← p − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
/// ```
pub fn adam_step<F: Scalar, P: ParamBlocks<F>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<F>,
    lr: F,
    cfg: &AdamConfig,
) {
    state.t += 1;
    let b1 = F::lit(cfg.beta1);
    let b2 = F::lit(cfg.beta2);
    let eps = F::lit(cfg.eps);
    let one = F::one();
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let grads = grads.blocks();
    for (((p, g), m), v) in params
        .blocks_mut()
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        assert_eq!(p.len(), g.len(), "gradient block shape mismatch");
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
