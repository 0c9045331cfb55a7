use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saelab::sae::{GateParams, SaeArchitecture, SaeKind, SaeParams};

fn matvec(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.nrows())
        .map(|i| (0..w.ncols()).map(|j| w[[i, j]] * x[j]).sum())
        .collect()
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Brute-force selection: sort indices by (value desc, index asc).
pub fn topk_sort(v: &[f64], k: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0; v.len()];
    for &i in &idx[..k] {
        out[i] = v[i];
    }
    out
}

pub fn encode(p: &SaeParams<f64>, arch: &SaeArchitecture, x: &[f64]) -> Vec<f64> {
    match arch.kind {
        SaeKind::Relu => matvec(&p.w_enc, x)
            .iter()
            .zip(p.b_enc.iter())
            .map(|(a, b)| relu(a + b))
            .collect(),
        SaeKind::TopK => {
            let pre: Vec<f64> = if arch.topk_use_bias {
                matvec(&p.w_enc, x)
                    .iter()
                    .zip(p.b_enc.iter())
                    .map(|(a, b)| relu(a + b))
                    .collect()
            } else {
                matvec(&p.w_enc, x)
            };
            topk_sort(&pre, arch.k().unwrap())
        }
        SaeKind::Gated => {
            let g = p.gate.as_ref().unwrap();
            let c: Vec<f64> = x.iter().zip(p.b_dec.iter()).map(|(a, b)| a - b).collect();
            let gate = matvec(&g.w_gate, &c);
            let mag = matvec(&g.w_mag, &c);
            (0..p.n())
                .map(|i| {
                    let on = if gate[i] + g.b_gate[i] > 0.0 { 1.0 } else { 0.0 };
                    on * relu(mag[i] + g.b_mag[i])
                })
                .collect()
        }
    }
}

pub fn decode(w_dec: &Array2<f64>, b_dec: &Array1<f64>, z: &[f64]) -> Vec<f64> {
    matvec(w_dec, z).iter().zip(b_dec.iter()).map(|(a, b)| a + b).collect()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// (reconstruction, sparsity, auxiliary). `frozen` supplies the decoder used
/// by the gated auxiliary term.
pub fn loss(
    p: &SaeParams<f64>,
    frozen: &SaeParams<f64>,
    arch: &SaeArchitecture,
    rows: &[Vec<f64>],
    lambda: f64,
) -> (f64, f64, f64) {
    let b = rows.len() as f64;
    let (mut rec, mut sp, mut aux) = (0.0, 0.0, 0.0);
    for x in rows {
        let z = encode(p, arch, x);
        let xh = decode(&p.w_dec, &p.b_dec, &z);
        rec += sq_dist(x, &xh);
        match arch.kind {
            SaeKind::Relu => sp += lambda * z.iter().map(|v| v.abs()).sum::<f64>(),
            SaeKind::TopK => {}
            SaeKind::Gated => {
                let g = p.gate.as_ref().unwrap();
                let c: Vec<f64> = x.iter().zip(p.b_dec.iter()).map(|(a, b)| a - b).collect();
                let act: Vec<f64> = matvec(&g.w_gate, &c)
                    .iter()
                    .zip(g.b_gate.iter())
                    .map(|(a, b)| relu(a + b))
                    .collect();
                sp += lambda * act.iter().sum::<f64>();
                let xa = decode(&frozen.w_dec, &frozen.b_dec, &act);
                aux += sq_dist(x, &xa);
            }
        }
    }
    (rec / b, sp / b, aux / b)
}

pub fn total(
    p: &SaeParams<f64>,
    frozen: &SaeParams<f64>,
    arch: &SaeArchitecture,
    rows: &[Vec<f64>],
    lambda: f64,
) -> f64 {
    let (a, b, c) = loss(p, frozen, arch, rows, lambda);
    a + b + c
}

/// Random parameters with every block populated (including nonzero biases).
pub fn random_params(arch: &SaeArchitecture, d: usize, n: usize, rng: &mut ChaCha8Rng) -> SaeParams<f64> {
    let mut m = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0));
    let w_enc = m(n, d);
    let w_dec = m(d, n);
    let gate = (arch.kind == SaeKind::Gated).then(|| {
        let w_gate = m(n, d);
        let w_mag = if arch.tie_gate_weights { w_gate.clone() } else { m(n, d) };
        (w_gate, w_mag)
    });
    let mut v = |len: usize| Array1::from_shape_simple_fn(len, || rng.gen_range(-0.5..0.5));
    let b_enc = if arch.kind == SaeKind::TopK && !arch.topk_use_bias {
        Array1::zeros(n)
    } else {
        v(n)
    };
    let b_dec = v(d);
    let gate = gate.map(|(w_gate, w_mag)| GateParams {
        w_gate,
        b_gate: v(n),
        w_mag,
        b_mag: v(n),
    });
    SaeParams {
        w_enc,
        b_enc,
        w_dec,
        b_dec,
        gate,
    }
}

pub fn random_rows(b: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..b)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect()
}

pub fn rows_to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows[0].len();
    Array2::from_shape_vec((rows.len(), d), rows.concat()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite differences of the oracle total over every parameter
/// entry. Returns gradients in the crate's block order.
pub fn fd_grad(p: &SaeParams<f64>, arch: &SaeArchitecture, rows: &[Vec<f64>], lambda: f64, h: f64) -> Vec<Vec<f64>> {
    let frozen = p.clone();
    let n_blocks = p.blocks().len();
    let mut out = Vec::with_capacity(n_blocks);
    for bi in 0..n_blocks {
        let len = p.blocks()[bi].len();
        let mut g = vec![0.0; len];
        for (j, gj) in g.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let mut q = p.clone();
                q.blocks_mut()[bi][j] += delta;
                if arch.tie_gate_weights && (bi == 4 || bi == 6) {
                    // shared matrix: move both copies together
                    let other = if bi == 4 { 6 } else { 4 };
                    q.blocks_mut()[other][j] += delta;
                }
                total(&q, &frozen, arch, rows, lambda)
            };
            *gj = (eval(h) - eval(-h)) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// max over entries of |a - f| / max(|a|, |f|, floor)
pub fn max_rel_err(analytic: &[&[f64]], fd: &[Vec<f64>], floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, f) in analytic.iter().zip(fd) {
        for (&x, &y) in a.iter().zip(f) {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

pub fn mse(x: &[f64], xh: &[f64]) -> f64 {
    sq_dist(x, xh) / x.len() as f64
}

pub fn l1(z: &[f64]) -> f64 {
    z.iter().map(|v| v.abs()).sum()
}

pub fn l0(z: &[f64]) -> usize {
    z.iter().filter(|&&v| v != 0.0).count()
}
