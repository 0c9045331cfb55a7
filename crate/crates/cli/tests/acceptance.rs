//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits nonzero if any fails. Pass criterion names as arguments
//! to run a subset.

#[path = "../../core/tests/common/dag.rs"]
#[allow(dead_code)]
mod dag;
#[path = "../../core/tests/common/oracle.rs"]
#[allow(dead_code)]
mod oracle;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{array, Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;

use saelab::metrics::{dataset_eval, l0, l1, mse};
use saelab::ontology::{ontology_report, random_baseline, FeatureClassSet, Hierarchy, SaeEncoder, DEFAULT_THRESHOLDS};
use saelab::probe::{domain_shift_eval, eval_probe, fit_probe, Domain, ProbeConfig};
use saelab::sae::{decode, encode, encode_batch, grad, loss, topk_select, SaeArchitecture, SaeKind};
use saelab::schedule::LinearSchedule;
use saelab::steering::{steer, steer_negative, SteeringVector, DEFAULT_LAMBDA_RANGE};
use saelab::store::{ActivationDataset, DatasetMeta};
use saelab::sweep::{sweep, SweepGrid};
use saelab::synthetic;
use saelab::trainer::{train, TrainConfig};
use saelab::Scalar;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit_s: u64, start: Instant, detail: String, ok: bool) -> Outcome {
    let t = start.elapsed();
    let fast = t <= Duration::from_secs(limit_s);
    check(
        ok && fast,
        format!("{detail}; {:.2} s of {limit_s} s budget", t.as_secs_f64()),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for arch in [
        SaeArchitecture::relu(0.3),
        SaeArchitecture::topk(4),
        SaeArchitecture::gated(0.3),
    ] {
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let mut rng = oracle::rng(seed);
            let p = oracle::random_params(&arch, 8, 16, &mut rng);
            let rows = oracle::random_rows(4, 8, &mut rng);
            let (_, g) =
                grad(&p, &arch, oracle::rows_to_array(&rows).view(), arch.lambda()).map_err(|e| e.to_string())?;
            let fd = oracle::fd_grad(&p, &arch, &rows, arch.lambda(), 1e-5);
            worst = worst.max(oracle::max_rel_err(&g.blocks(), &fd, 1e-6));
        }
        ok &= worst < 1e-4;
        parts.push(format!("{} {worst:.1e}", arch.kind));
    }
    within(10, start, format!("max rel err {}", parts.join(", ")), ok)
}

fn equation_fidelity() -> Outcome {
    let start = Instant::now();
    let mut biased = SaeArchitecture::topk(5);
    biased.topk_use_bias = true;
    let mut tied = SaeArchitecture::gated(0.7);
    tied.tie_gate_weights = true;
    let archs = [
        SaeArchitecture::relu(0.7),
        SaeArchitecture::topk(5),
        biased,
        SaeArchitecture::gated(0.7),
        tied,
    ];
    let (d, n) = (12, 24);
    let mut worst: f64 = 0.0;
    let mut l0_ok = true;
    let mut rng = oracle::rng(1);
    for i in 0..1000 {
        let arch = &archs[i % archs.len()];
        let p = oracle::random_params(arch, d, n, &mut rng);
        let rows = oracle::random_rows(3, d, &mut rng);
        let x = &rows[0];
        let z = encode(&p, arch, Array1::from(x.clone()).view()).map_err(|e| e.to_string())?;
        let z_want = oracle::encode(&p, arch, x);
        let xh = decode(&p, z.view()).map_err(|e| e.to_string())?;
        let xh_want = oracle::decode(&p.w_dec, &p.b_dec, &z_want);
        for (a, b) in z.iter().zip(&z_want).chain(xh.iter().zip(&xh_want)) {
            worst = worst.max((a - b).abs());
        }
        let lambda = rng.gen_range(0.0..2.0);
        let lb = loss(&p, arch, oracle::rows_to_array(&rows).view(), lambda).map_err(|e| e.to_string())?;
        let (r, s, a) = oracle::loss(&p, &p, arch, &rows, lambda);
        worst = worst.max((lb.reconstruction - r).abs() / r.max(1.0));
        worst = worst.max((lb.sparsity - s).abs() / s.max(1.0));
        worst = worst.max((lb.auxiliary - a).abs() / a.max(1.0));
        worst = worst.max((mse(Array1::from(x.clone()).view(), xh.view()).unwrap() - oracle::mse(x, &xh_want)).abs());
        worst = worst.max((l1(z.view()) - oracle::l1(&z_want)).abs());
        l0_ok &= l0(z.view()) == oracle::l0(&z_want);
    }
    within(
        5,
        start,
        format!("max deviation {worst:.1e}, l0 exact: {l0_ok}"),
        worst < 1e-10 && l0_ok,
    )
}

fn topk_contract() -> Outcome {
    let start = Instant::now();
    let mut rng = oracle::rng(11);
    let mut worst = 0;
    let mut ok = true;
    for k in [1usize, 4, 16] {
        let arch = SaeArchitecture::topk(k);
        let p = oracle::random_params(&arch, 16, 64, &mut rng);
        let x = Array2::from_shape_simple_fn((10_000, 16), || rng.gen_range(-2.0..2.0));
        let z = encode_batch(&p, &arch, x.view()).map_err(|e| e.to_string())?;
        for row in z.rows() {
            let c = l0(row);
            ok &= c <= k;
            worst = worst.max(c);
        }
    }
    let flat = Array1::from(vec![1.0; 8]);
    let mut ties_ok = true;
    for k in 1..=8 {
        let a = topk_select(flat.view(), k).unwrap();
        let b = topk_select(flat.view(), k).unwrap();
        let kept: Vec<usize> = (0..8).filter(|&i| a[i] != 0.0).collect();
        ties_ok &= a == b && kept == (0..k).collect::<Vec<_>>();
    }
    let v = array![2.0, 5.0, 5.0, 1.0, 5.0];
    ties_ok &= topk_select(v.view(), 2).unwrap().to_vec() == vec![0.0, 5.0, 5.0, 0.0, 0.0];
    within(
        5,
        start,
        format!("max l0 seen {worst} over 3×10⁴ inputs, ties to lowest index: {ties_ok}"),
        ok && ties_ok,
    )
}

/// Independent piecewise definition of the schedule multiplier.
fn schedule_oracle(t: f64, total: f64, warm: f64, decay: f64) -> f64 {
    let up = if warm > 0.0 && t < warm { t / warm } else { 1.0 };
    let down = if decay > 0.0 && t > total - decay {
        (total - t) / decay
    } else {
        1.0
    };
    up.min(down)
}

fn schedule_boundaries() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut cases = 0;
    for total in [1usize, 2, 7, 20, 100, 234, 1000, 2344] {
        let lr = LinearSchedule::new(total, 0.05, 0.20);
        let lam = LinearSchedule::new(total, 0.05, 0.0);
        let (w, dcy) = (lr.warmup_steps(), lr.decay_steps());
        ok &= lr.step(0) == 0.0 && lr.step(total) == 0.0 && lam.step(0) == 0.0;
        for s in w..=total.saturating_sub(dcy) {
            ok &= lr.step(s) == 1.0;
        }
        for s in lam.warmup_steps()..=total {
            ok &= lam.step(s) == 1.0;
        }
        for s in 0..=total {
            let want = schedule_oracle(s as f64, total as f64, w as f64, dcy as f64);
            worst = worst.max((lr.step(s) - want).abs());
        }
        if w + dcy <= total {
            for b in [w as f64, (total - dcy) as f64] {
                if let (Some(l), Some(r)) = (lr.segment_value(b, true), lr.segment_value(b, false)) {
                    worst = worst.max((l - r).abs()).max((l - lr.at(b)).abs());
                }
            }
            let b = lam.warmup_steps() as f64;
            if let (Some(l), Some(r)) = (lam.segment_value(b, true), lam.segment_value(b, false)) {
                worst = worst.max((l - r).abs());
            }
        }
        cases += 1;
    }
    check(
        ok && worst <= 1e-12,
        format!("{cases} run lengths, endpoints and plateau exact: {ok}, max gap {worst:.1e}"),
    )
}

fn gaussian_ds(rows: usize, d: usize, seed: u64) -> ActivationDataset {
    let x = synthetic::gaussian(rows, d, seed);
    ActivationDataset::from_rows(x.view(), None, DatasetMeta::synthetic("gaussian")).unwrap()
}

fn lambda_zero_autoencoding() -> Outcome {
    let start = Instant::now();
    let ds = gaussian_ds(5000, 16, 0);
    let cfg = TrainConfig::default();
    let arch = SaeArchitecture::relu(0.0);
    let out = train::<f32>(&ds, &arch, 2, &cfg).map_err(|e| e.to_string())?;
    let (_, val) = ds.view().split(cfg.val_fraction, cfg.seed).map_err(|e| e.to_string())?;
    let rep = dataset_eval(&out.params, &arch, &val, "val").map_err(|e| e.to_string())?;
    within(
        60,
        start,
        format!(
            "held-out mse {:.4} (need < 1e-2), explained variance {:.4} (need > 0.95)",
            rep.mean_mse, rep.explained_variance
        ),
        rep.mean_mse < 1e-2 && rep.explained_variance > 0.95,
    )
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &p in &idx[i..=j] {
            r[p] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 - 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
    let va: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    let vb: f64 = rb.iter().map(|x| (x - mean).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn dictionary_data() -> synthetic::SparseDictionaryData {
    synthetic::sparse_dictionary(&synthetic::DictionaryConfig::default()).unwrap()
}

fn sparsity_tradeoff() -> Outcome {
    let start = Instant::now();
    let ds = dictionary_data().to_dataset("dictionary").unwrap();
    let grid = SweepGrid {
        expansions: vec![8],
        architectures: vec![SaeKind::Relu],
        ..Default::default()
    };
    let rows = sweep(&ds, &grid, &TrainConfig::default(), None).map_err(|e| e.to_string())?;
    if let Some(bad) = rows.iter().find(|r| !r.is_ok()) {
        return Err(format!("run failed: {}", bad.status));
    }
    let lambdas: Vec<f64> = rows.iter().map(|r| r.sparsity_value).collect();
    let l0s: Vec<f64> = rows.iter().map(|r| r.final_val_l0.unwrap()).collect();
    let mses: Vec<f64> = rows.iter().map(|r| r.final_val_mse.unwrap()).collect();
    let drops = l0s.windows(2).filter(|w| w[1] < w[0]).count();
    let rho = spearman(&lambdas, &mses);
    let l0_txt: Vec<String> = l0s.iter().map(|v| format!("{v:.2}")).collect();
    within(
        600,
        start,
        format!(
            "L0 [{}] drops on {drops}/{} steps, Spearman(λ, mse) {rho:.3}",
            l0_txt.join(", "),
            l0s.len() - 1
        ),
        drops == l0s.len() - 1 && rho >= 0.8,
    )
}

fn dictionary_recovery() -> Outcome {
    let start = Instant::now();
    let data = dictionary_data();
    let ds = data.to_dataset("dictionary").unwrap();
    let out = train::<f32>(&ds, &SaeArchitecture::topk(3), 2, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let w_dec = out.params.w_dec.mapv(f64::from);
    // ground-truth atoms are rows; decoder columns are the learned atoms
    let mut total = 0.0;
    for atom in data.atoms.rows() {
        let best = w_dec
            .columns()
            .into_iter()
            .map(|c| c.dot(&atom) / (c.dot(&c).sqrt() * atom.dot(&atom).sqrt()).max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    let mmcs = total / data.atoms.nrows() as f64;
    within(
        900,
        start,
        format!("mean max cosine {mmcs:.4} (need > 0.9)"),
        mmcs > 0.9,
    )
}

fn toy_hierarchy() -> Hierarchy {
    Hierarchy::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy_hierarchy.json")).unwrap()
}

fn ontology_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = oracle::rng(2024);
    let (mut checked, mut mismatches) = (0, 0);
    for _ in 0..100 {
        let g = dag::random_dag(&mut rng, 200, 50);
        let h = Hierarchy::from_file(g.file.clone()).map_err(|e| e.to_string())?;
        for node in 0..g.n() {
            if h.leaf_set_of(&g.ids[node]).ok() != Some(g.leaf_set(node)) {
                mismatches += 1;
            }
        }
        for _ in 0..10 {
            let k = rng.gen_range(1..=g.leaves.len().min(6));
            let mut classes = sample(&mut rng, g.leaves.len(), k).into_vec();
            classes.sort_unstable();
            let same = match (h.lch_metrics(&classes), g.brute(&classes)) {
                (Ok(m), Some((id, height, cov))) => h.node_id(m.node) == id && m.height == height && m.coverage == cov,
                (Err(_), None) => true,
                _ => false,
            };
            mismatches += usize::from(!same);
            checked += 1;
        }
    }

    let h = toy_hierarchy();
    let id = |c: &[usize]| h.node_id(h.lch(c).unwrap()).to_string();
    let leaf_ids = |node: &str| -> Vec<usize> { h.leaf_set_of(node).unwrap() };
    let mut toy = vec![
        h.n_nodes() == 7,
        leaf_ids("root") == vec![0, 1, 2, 3],
        leaf_ids("a") == vec![0],
        leaf_ids("h1") == vec![0, 1],
        id(&[0, 1]) == "h1",
        id(&[0, 2]) == "root",
        h.lch_height(&[0]).unwrap() == 0.0,
        h.lch_height(&[0, 1]).unwrap() == 1.0,
        h.lch_height(&[0, 2]).unwrap() == 2.0,
        h.coverage(&[3]).unwrap() == 1.0,
        h.coverage(&[0, 1]).unwrap() == 1.0,
        h.coverage(&[0, 2]).unwrap() == 0.5,
    ];
    let cyc = Hierarchy::from_json(r#"{"nodes":[{"id":"a"},{"id":"b"}],"edges":[["a","b"],["b","a"]],"leaves":["a"]}"#);
    toy.push(cyc.is_err_and(|e| e.to_string().contains("cycle")));
    let two_parents = Hierarchy::from_json(
        r#"{"nodes":[{"id":"r"},{"id":"p"},{"id":"q"},{"id":"a"}],"edges":[["p","r"],["q","r"],["a","p"],["a","q"]],"leaves":["a"]}"#,
    );
    toy.push(two_parents.is_ok_and(|h| h.parents(h.leaf_node(0)).len() == 2));
    let fs = |classes: Vec<usize>| FeatureClassSet {
        feature: 0,
        classes,
        rates: vec![],
    };
    let rep = ontology_report("t", &[fs(vec![0, 1]), fs(vec![0, 2])], &h, &DEFAULT_THRESHOLDS).unwrap();
    toy.push(rep.count_above(0.99) == Some(1) && rep.count_above(0.75) == Some(1));
    let singles = ontology_report("t", &[fs(vec![0]), fs(vec![3])], &h, &DEFAULT_THRESHOLDS).unwrap();
    toy.push(
        singles.count_above(0.99) == Some(0) && singles.count_above(0.75) == Some(0) && singles.n_single_class == 2,
    );
    let toy_ok = toy.iter().filter(|&&b| b).count();
    within(
        30,
        start,
        format!(
            "{mismatches} mismatches over {checked} class sets on 100 DAGs; toy examples {toy_ok}/{}",
            toy.len()
        ),
        mismatches == 0 && toy_ok == toy.len(),
    )
}

fn ontology_discrimination() -> Outcome {
    let start = Instant::now();
    let cfg = synthetic::OntologyBenchConfig::default();
    let data = synthetic::ontology_benchmark(&cfg).unwrap();
    let ds = data.to_dataset("ontology benchmark").unwrap();
    let h = Hierarchy::from_file(synthetic::benchmark_hierarchy(&cfg)).map_err(|e| e.to_string())?;
    let arch = SaeArchitecture::topk(3);
    let out = train::<f64>(&ds, &arch, 2, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let enc = SaeEncoder {
        params: &out.params,
        arch: &arch,
    };
    let view = ds.view();
    let sae = saelab::ontology::encoder_report("sae", &enc, &view, &h, 0.5, &DEFAULT_THRESHOLDS)
        .map_err(|e| e.to_string())?;
    let rnd =
        random_baseline::<f64>(out.params.n(), &view, &h, 0.5, &DEFAULT_THRESHOLDS, 0).map_err(|e| e.to_string())?;
    let (s, r) = (sae.count_above(0.99).unwrap(), rnd.count_above(0.99).unwrap());
    within(
        300,
        start,
        format!(
            "multi-class features with coverage > 0.99: SAE {s}, random {r} (of {} each)",
            out.params.n()
        ),
        s > r,
    )
}

fn probe_parity() -> Outcome {
    let (x, y) = synthetic::blobs(&array![[-2.0, 0.0], [2.0, 0.0]], 500, 0.3, 1);
    let (p, _) = fit_probe(x.view(), &y, 2, &ProbeConfig::default()).map_err(|e| e.to_string())?;
    let acc = eval_probe(&p, x.view(), &y).unwrap();

    // config capture through the CLI across all three feature modes
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("blobs.saeact");
    saelab::store::write_dataset(x.view(), Some(&y), &DatasetMeta::default(), &ds).unwrap();
    let arch = SaeArchitecture::relu(1.0);
    let ck = dir.path().join("ck.saeprm");
    saelab::sae::write_checkpoint(
        &arch,
        &saelab::sae::init_params::<f32>(&arch, 2, 4, 0, None).unwrap(),
        &ck,
    )
    .unwrap();
    let cfg = dir.path().join("probe.json");
    std::fs::write(
        &cfg,
        serde_json::json!({"train": ds, "checkpoint": ck, "modes": ["raw", "latent", "pre_activation"]}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_saelab"))
        .args(["probe", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("probe_report.json")).unwrap_or_default())
            .unwrap_or(serde_json::Value::Null);
    let configs: Vec<&serde_json::Value> = rep
        .as_array()
        .map(|a| a.iter().map(|r| &r["config"]).collect())
        .unwrap_or_default();
    let parity = status.status.success() && configs.len() == 3 && configs.windows(2).all(|w| w[0] == w[1]);

    let centers = synthetic::unit_atoms(4, 8, 5) * 2.0;
    let (x4, y4) = synthetic::blobs(&centers, 500, 0.3, 5);
    let (p4, _) = fit_probe(x4.view(), &y4, 4, &ProbeConfig::default()).map_err(|e| e.to_string())?;
    let unit = synthetic::add_noise(&Array2::zeros(x4.dim()), 1.0, 9);
    let shifted: Vec<Array2<f64>> = [0.0, 0.5, 1.0, 2.0, 4.0].iter().map(|&s| &x4 + &(&unit * s)).collect();
    let domains: Vec<Domain<'_, f64>> = shifted
        .iter()
        .enumerate()
        .map(|(i, f)| Domain {
            tag: format!("sigma{i}"),
            features: f.view(),
            labels: &y4,
            n_classes: 4,
        })
        .collect();
    let accs: Vec<f64> = domain_shift_eval(&p4, &domains)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| r.1)
        .collect();
    let monotone = accs.windows(2).all(|w| w[1] <= w[0]);
    let acc_txt: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
    check(
        acc > 0.99 && parity && monotone,
        format!(
            "blob train accuracy {acc:.4}, identical configs across 3 modes: {parity}, shifted accuracies [{}]",
            acc_txt.join(", ")
        ),
    )
}

fn steering_identities_for<F: Scalar>(tol: f64) -> (bool, f64) {
    let mut rng = oracle::rng(12);
    let mut worst: f64 = 0.0;
    let mut identity = true;
    for _ in 0..1000 {
        let d = rng.gen_range(1..128);
        let v: Array1<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = &v / v.dot(&v).sqrt();
        let sv = SteeringVector {
            feature: 0,
            direction: v.mapv(F::lit),
            source: None,
            lambda_range: DEFAULT_LAMBDA_RANGE,
        };
        let x: Array1<F> = (0..d).map(|_| F::lit(rng.gen_range(-5.0..5.0))).collect();
        let (a, b) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let moved = steer(x.view(), &sv, F::lit(a)).unwrap();
        let disp = moved
            .iter()
            .zip(&x)
            .map(|(m, o)| (m.as_f64() - o.as_f64()).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max((disp - a.abs()).abs() / (1.0 + a.abs()));
        identity &= steer(x.view(), &sv, F::zero()).unwrap() == x;
        let twice = steer(moved.view(), &sv, F::lit(b)).unwrap();
        let once = steer(x.view(), &sv, F::lit(a) + F::lit(b)).unwrap();
        let neg = steer_negative(x.view(), &sv, F::lit(a)).unwrap();
        for i in 0..d {
            let scale = 1.0 + x[i].as_f64().abs();
            worst = worst.max((twice[i].as_f64() - once[i].as_f64()).abs() / scale);
            let mid = (moved[i].as_f64() + neg[i].as_f64()) / 2.0;
            worst = worst.max((mid - x[i].as_f64()).abs() / scale);
        }
    }
    (identity && worst <= tol, worst)
}

fn steering_identities() -> Outcome {
    let (ok64, w64) = steering_identities_for::<f64>(1e-12);
    let (ok32, w32) = steering_identities_for::<f32>(1e-6);
    check(
        ok64 && ok32,
        format!("10³ vectors: worst deviation f64 {w64:.1e} (≤ 1e-12), f32 {w32:.1e} (≤ 1e-6)"),
    )
}

fn cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_saelab"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "saelab {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&o.stderr)
        ))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("d.saeact");
    cli(&[
        "synth",
        "dictionary",
        "--rows",
        "3000",
        "--dim",
        "16",
        "--atoms",
        "32",
        "--out",
        data.to_str().unwrap(),
    ])?;
    let write = |name: &str, v: serde_json::Value| {
        let p = root.join(name);
        std::fs::write(&p, v.to_string()).unwrap();
        p.display().to_string()
    };
    let mut configs = Vec::new();
    for kind in ["relu", "topk", "gated"] {
        let sparsity = if kind == "topk" {
            serde_json::json!({"k": 4})
        } else {
            serde_json::json!({"lambda": 0.5})
        };
        configs.push((
            "train",
            write(
                &format!("train_{kind}.json"),
                serde_json::json!({"dataset": data, "arch": {"kind": kind, "sparsity": sparsity}, "expansion": 2, "train": {"eval_every": 20}}),
            ),
        ));
    }
    configs.push((
        "sweep",
        write(
            "sweep.json",
            serde_json::json!({"dataset": data, "grid": {"lambdas": [0.5, 5.0], "ks": [2, 8], "expansions": [2]}, "train": {"epochs": 1}}),
        ),
    ));
    let mut compared = 0;
    for (i, (cmd, cfg)) in configs.iter().enumerate() {
        let (a, b) = (root.join(format!("run{i}a")), root.join(format!("run{i}b")));
        for out in [&a, &b] {
            cli(&[
                cmd,
                cfg,
                "--out",
                out.to_str().unwrap(),
                "--threads",
                "1",
                "--seed",
                "7",
            ])?;
        }
        if *cmd == "train" {
            let ev = write(
                &format!("eval{i}.json"),
                serde_json::json!({"checkpoint": a.join("checkpoint.saeprm"), "datasets": [{"tag": "d", "path": data}]}),
            );
            for out in [a.join("eval"), b.join("eval")] {
                cli(&["eval", &ev, "--out", out.to_str().unwrap(), "--threads", "1"])?;
            }
        }
        let files: Vec<String> = walk(&a).into_iter().filter(|f| !f.ends_with("manifest.json")).collect();
        for f in files {
            let (x, y) = (std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).ok());
            if Some(&x) != y.as_ref() {
                return Err(format!("{cmd}: {f} differs between reruns"));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} checkpoint/CSV/JSON artifacts byte-identical across reruns with --threads 1"
    ))
}

fn walk(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("gradient_correctness", gradient_correctness),
        ("equation_fidelity", equation_fidelity),
        ("topk_contract", topk_contract),
        ("schedule_boundaries", schedule_boundaries),
        ("lambda_zero_autoencoding", lambda_zero_autoencoding),
        ("sparsity_tradeoff", sparsity_tradeoff),
        ("dictionary_recovery", dictionary_recovery),
        ("ontology_oracle", ontology_oracle),
        ("ontology_discrimination", ontology_discrimination),
        ("probe_parity", probe_parity),
        ("steering_identities", steering_identities),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let res = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match res {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                println!("FAIL {name}: {d}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        println!("{} criteria failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
