use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{ParamGrads, SaeArchitecture, SaeKind, SaeParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Components of the training objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Batch mean of `‖x − x̂‖²` (summed over dimensions).
    pub reconstruction: f64,
    /// `λ ·` batch mean of the L1 penalty; 0 for TopK.
    pub sparsity: f64,
    /// Gated frozen-decoder reconstruction of the gate activations; 0 otherwise.
    pub auxiliary: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward<F> {
    /// Encoder pre-activations (`b × n`). For gated this is the magnitude path.
    pub pre: Array2<F>,
    /// Gated only: gate pre-activations.
    pub gate_pre: Option<Array2<F>>,
    pub z: Array2<F>,
    pub x_hat: Array2<F>,
    /// TopK only: 1 where the latent was selected (and, with bias, positive).
    pub topk_mask: Option<Array2<F>>,
}

/// Keeps the `k` largest entries of `v` (ties toward the lowest index) and
/// zeroes the rest.
pub fn topk_select<F: Scalar>(v: ArrayView1<'_, F>, k: usize) -> Result<Array1<F>> {
    if k == 0 || k > v.len() {
        return Err(Error::invalid(format!("k = {k} must satisfy 1 ≤ k ≤ {}", v.len())));
    }
    let mut out = v.to_owned();
    topk_select_in_place(out.as_slice_mut().expect("contiguous"), k);
    Ok(out)
}

fn rank_order<F: Scalar>(v: &[F], a: usize, b: usize) -> Ordering {
    v[b].partial_cmp(&v[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// In-place variant of [`topk_select`]. Returns a keep-mask. Panics if `k`
/// is 0 or exceeds the row length.
pub fn topk_select_in_place<F: Scalar>(row: &mut [F], k: usize) -> Vec<bool> {
    assert!(k >= 1 && k <= row.len(), "k out of range");
    let mut keep = vec![false; row.len()];
    if k == row.len() {
        keep.fill(true);
        return keep;
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(row, a, b));
    for &i in &idx[..k] {
        keep[i] = true;
    }
    for (v, &kept) in row.iter_mut().zip(&keep) {
        if !kept {
            *v = F::zero();
        }
    }
    keep
}

fn check_input<F: Scalar>(params: &SaeParams<F>, x: &ArrayView2<'_, F>) -> Result<()> {
    if x.ncols() != params.d() {
        return Err(Error::DimMismatch {
            expected: params.d(),
            found: x.ncols(),
        });
    }
    Ok(())
}

fn affine<F: Scalar>(x: &ArrayView2<'_, F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    let mut out = x.dot(&w.t());
    out += b;
    out
}

fn relu<F: Scalar>(a: &Array2<F>) -> Array2<F> {
    a.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Pre-activations without the sparsifying nonlinearity: `W_enc x + b_enc`
/// for relu/topk, the magnitude path `W_mag (x − b_dec) + b_mag` for gated.
pub fn pre_activations<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    x: ArrayView2<'_, F>,
) -> Result<Array2<F>> {
    check_input(params, &x)?;
    Ok(match arch.kind {
        SaeKind::Relu | SaeKind::TopK => affine(&x, &params.w_enc, &params.b_enc),
        SaeKind::Gated => {
            let g = params
                .gate
                .as_ref()
                .ok_or_else(|| Error::invalid("gated SAE without gate parameters"))?;
            let centered = &x - &params.b_dec;
            affine(&centered.view(), &g.w_mag, &g.b_mag)
        }
    })
}

/// Full forward pass over a batch of rows.
pub fn forward_batch<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    x: ArrayView2<'_, F>,
) -> Result<Forward<F>> {
    check_input(params, &x)?;
    let mut topk_mask = None;
    let (pre, gate_pre, z) = match arch.kind {
        SaeKind::Relu => {
            let pre = affine(&x, &params.w_enc, &params.b_enc);
            let z = relu(&pre);
            (pre, None, z)
        }
        SaeKind::TopK => {
            let k = arch.k().ok_or_else(|| Error::invalid("topk SAE without k"))?;
            if k == 0 || k > params.n() {
                return Err(Error::invalid(format!(
                    "k = {k} must satisfy 1 ≤ k ≤ n = {}",
                    params.n()
                )));
            }
            let pre = if arch.topk_use_bias {
                affine(&x, &params.w_enc, &params.b_enc)
            } else {
                x.dot(&params.w_enc.t())
            };
            let mut z = if arch.topk_use_bias { relu(&pre) } else { pre.clone() };
            let mut mask = Array2::zeros(z.raw_dim());
            for ((mut row, mut m), p) in z.outer_iter_mut().zip(mask.outer_iter_mut()).zip(pre.outer_iter()) {
                let keep = topk_select_in_place(row.as_slice_mut().expect("contiguous"), k);
                for ((mv, kept), &pv) in m.iter_mut().zip(keep).zip(p.iter()) {
                    if kept && (!arch.topk_use_bias || pv > F::zero()) {
                        *mv = F::one();
                    }
                }
            }
            topk_mask = Some(mask);
            (pre, None, z)
        }
        SaeKind::Gated => {
            let g = params
                .gate
                .as_ref()
                .ok_or_else(|| Error::invalid("gated SAE without gate parameters"))?;
            let centered = &x - &params.b_dec;
            let gate_pre = affine(&centered.view(), &g.w_gate, &g.b_gate);
            let pre = affine(&centered.view(), &g.w_mag, &g.b_mag);
            let mut z = relu(&pre);
            Zip::from(&mut z).and(&gate_pre).for_each(|zv, &gp| {
                if gp <= F::zero() {
                    *zv = F::zero();
                }
            });
            (pre, Some(gate_pre), z)
        }
    };
    let x_hat = decode_batch(params, z.view())?;
    Ok(Forward {
        pre,
        gate_pre,
        z,
        x_hat,
        topk_mask,
    })
}

pub fn encode_batch<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    x: ArrayView2<'_, F>,
) -> Result<Array2<F>> {
    Ok(forward_batch(params, arch, x)?.z)
}

pub fn encode<F: Scalar>(params: &SaeParams<F>, arch: &SaeArchitecture, x: ArrayView1<'_, F>) -> Result<Array1<F>> {
    let z = encode_batch(params, arch, x.insert_axis(Axis(0)))?;
    Ok(z.index_axis_move(Axis(0), 0))
}

/// `x̂ = W_dec z + b_dec`, row-wise.
pub fn decode_batch<F: Scalar>(params: &SaeParams<F>, z: ArrayView2<'_, F>) -> Result<Array2<F>> {
    if z.ncols() != params.n() {
        return Err(Error::DimMismatch {
            expected: params.n(),
            found: z.ncols(),
        });
    }
    Ok(affine(&z, &params.w_dec, &params.b_dec))
}

pub fn decode<F: Scalar>(params: &SaeParams<F>, z: ArrayView1<'_, F>) -> Result<Array1<F>> {
    Ok(decode_batch(params, z.insert_axis(Axis(0)))?.index_axis_move(Axis(0), 0))
}

fn sum_sq<F: Scalar>(a: &Array2<F>) -> F {
    a.iter().fold(F::zero(), |acc, &v| acc + v * v)
}

fn sum_abs<F: Scalar>(a: &Array2<F>) -> F {
    a.iter().fold(F::zero(), |acc, &v| acc + v.abs())
}

/// Training objective on a batch with effective sparsity weight `lambda`.
pub fn loss<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    x: ArrayView2<'_, F>,
    lambda: F,
) -> Result<LossBreakdown> {
    let fwd = forward_batch(params, arch, x)?;
    Ok(breakdown(params, arch, &x, &fwd, lambda).0)
}

struct Residuals<F> {
    err: Array2<F>,
    aux_err: Option<Array2<F>>,
}

fn breakdown<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    x: &ArrayView2<'_, F>,
    fwd: &Forward<F>,
    lambda: F,
) -> (LossBreakdown, Residuals<F>) {
    let b = F::lit(x.nrows().max(1) as f64);
    let err = &fwd.x_hat - x;
    let reconstruction = sum_sq(&err) / b;
    let (sparsity, auxiliary, aux_err) = match arch.kind {
        SaeKind::Relu => (lambda * sum_abs(&fwd.z) / b, F::zero(), None),
        SaeKind::TopK => (F::zero(), F::zero(), None),
        SaeKind::Gated => {
            let gate_act = relu(fwd.gate_pre.as_ref().expect("gated forward"));
            let aux_hat = affine(&gate_act.view(), &params.w_dec, &params.b_dec);
            let aux_err = &aux_hat - x;
            (lambda * sum_abs(&gate_act) / b, sum_sq(&aux_err) / b, Some(aux_err))
        }
    };
    let lb = LossBreakdown {
        total: (reconstruction + sparsity + auxiliary).as_f64(),
        reconstruction: reconstruction.as_f64(),
        sparsity: sparsity.as_f64(),
        auxiliary: auxiliary.as_f64(),
    };
    (lb, Residuals { err, aux_err })
}

fn heaviside_mask<F: Scalar>(a: &Array2<F>) -> Array2<F> {
    a.mapv(|v| if v > F::zero() { F::one() } else { F::zero() })
}

/// Loss and analytic gradients of the total loss.
///
/// ReLU has derivative 0 at 0. The TopK selection and the gated Heaviside are
/// held constant. For gated, the auxiliary term decodes through a frozen copy
/// of `W_dec`/`b_dec`, so it only reaches the gate path; the `b_dec` that
/// centers the encoder input stays live in both paths.
pub fn grad<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    x: ArrayView2<'_, F>,
    lambda: F,
) -> Result<(LossBreakdown, ParamGrads<F>)> {
    grad_with_forward(params, arch, x, lambda).map(|(lb, g, _)| (lb, g))
}

/// [`grad`], also returning the forward pass it was computed from.
pub fn grad_with_forward<F: Scalar>(
    params: &SaeParams<F>,
    arch: &SaeArchitecture,
    x: ArrayView2<'_, F>,
    lambda: F,
) -> Result<(LossBreakdown, ParamGrads<F>, Forward<F>)> {
    let fwd = forward_batch(params, arch, x)?;
    let (lb, res) = breakdown(params, arch, &x, &fwd, lambda);
    let b = F::lit(x.nrows().max(1) as f64);
    let two_over_b = F::lit(2.0) / b;
    let mut g = params.zeros_like();

    // Decoder side, shared by all variants.
    let d_xhat = res.err.mapv(|v| v * two_over_b);
    g.w_dec = d_xhat.t().dot(&fwd.z);
    g.b_dec = d_xhat.sum_axis(Axis(0));
    let mut d_z = d_xhat.dot(&params.w_dec);

    match arch.kind {
        SaeKind::Relu => {
            let lam_b = lambda / b;
            Zip::from(&mut d_z).and(&fwd.z).for_each(|dz, &zv| {
                if zv > F::zero() {
                    *dz += lam_b;
                }
            });
            let d_pre = d_z * heaviside_mask(&fwd.pre);
            g.w_enc = d_pre.t().dot(&x);
            g.b_enc = d_pre.sum_axis(Axis(0));
        }
        SaeKind::TopK => {
            let d_pre = d_z * fwd.topk_mask.as_ref().expect("topk forward");
            g.w_enc = d_pre.t().dot(&x);
            if arch.topk_use_bias {
                g.b_enc = d_pre.sum_axis(Axis(0));
            }
        }
        SaeKind::Gated => {
            let gp = params.gate.as_ref().expect("gated params");
            let gate_pre = fwd.gate_pre.as_ref().expect("gated forward");
            let gate_on = heaviside_mask(gate_pre);
            let centered = &x - &params.b_dec;

            // Magnitude path: reconstruction only.
            let d_mag = &d_z * &gate_on * heaviside_mask(&fwd.pre);

            // Gate path: sparsity plus auxiliary through the frozen decoder.
            let aux_err = res.aux_err.as_ref().expect("aux residual");
            let d_gate_act = aux_err.mapv(|v| v * two_over_b).dot(&params.w_dec) + lambda / b;
            let d_gate = d_gate_act * &gate_on;

            let mut gg = g.gate.take().expect("gate grads");
            gg.w_mag = d_mag.t().dot(&centered);
            gg.b_mag = d_mag.sum_axis(Axis(0));
            gg.w_gate = d_gate.t().dot(&centered);
            gg.b_gate = d_gate.sum_axis(Axis(0));
            g.b_dec = &g.b_dec - &d_mag.sum_axis(Axis(0)).dot(&gp.w_mag);
            g.b_dec = &g.b_dec - &d_gate.sum_axis(Axis(0)).dot(&gp.w_gate);
            if arch.tie_gate_weights {
                let shared = &gg.w_gate + &gg.w_mag;
                gg.w_gate = shared.clone();
                gg.w_mag = shared;
            }
            g.gate = Some(gg);
        }
    }
    Ok((lb, g, fwd))
}
