//! Seeded synthetic datasets with known generative structure.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ontology::{HierarchyFile, HierarchyNode};
use crate::store::{ActivationDataset, DatasetMeta};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows × d` standard normal entries.
pub fn gaussian(rows: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, d), || StandardNormal.sample(&mut r))
}

/// `m` Gaussian directions in `R^d`, normalized to unit length (one per row).
pub fn unit_atoms(m: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut atoms = gaussian(m, d, seed);
    for mut row in atoms.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    atoms
}

/// Rows built as nonnegative combinations of a few ground-truth atoms.
#[derive(Debug, Clone)]
pub struct SparseDictionaryData {
    /// `m × d`, unit rows.
    pub atoms: Array2<f64>,
    pub rows: Array2<f64>,
    /// Active atom ids per row.
    pub supports: Vec<Vec<usize>>,
    pub labels: Option<Vec<u32>>,
}

impl SparseDictionaryData {
    pub fn to_dataset(&self, notes: &str) -> Result<ActivationDataset> {
        ActivationDataset::from_rows(self.rows.view(), self.labels.clone(), DatasetMeta::synthetic(notes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryConfig {
    pub rows: usize,
    pub d: usize,
    pub n_atoms: usize,
    pub active: usize,
    /// Coefficients are uniform on `[coef_min, coef_max)`.
    pub coef_min: f64,
    pub coef_max: f64,
    pub seed: u64,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig {
            rows: 50_000,
            d: 32,
            n_atoms: 64,
            active: 3,
            coef_min: 0.5,
            coef_max: 1.5,
            seed: 0,
        }
    }
}

fn check_coefs(c: &DictionaryConfig) -> Result<()> {
    if !(c.coef_min > 0.0 && c.coef_max > c.coef_min) {
        return Err(Error::invalid("coefficients need 0 < coef_min < coef_max"));
    }
    if c.rows == 0 || c.d == 0 {
        return Err(Error::invalid("rows and d must be ≥ 1"));
    }
    Ok(())
}

/// Each row sums `active` distinct atoms chosen uniformly at random.
pub fn sparse_dictionary(cfg: &DictionaryConfig) -> Result<SparseDictionaryData> {
    check_coefs(cfg)?;
    if cfg.active == 0 || cfg.active > cfg.n_atoms {
        return Err(Error::invalid("need 1 ≤ active ≤ n_atoms"));
    }
    let atoms = unit_atoms(cfg.n_atoms, cfg.d, cfg.seed);
    let mut r = rng(cfg.seed.wrapping_add(1));
    let mut rows = Array2::zeros((cfg.rows, cfg.d));
    let mut supports = Vec::with_capacity(cfg.rows);
    for mut row in rows.rows_mut() {
        let mut support: Vec<usize> = sample(&mut r, cfg.n_atoms, cfg.active).into_vec();
        support.sort_unstable();
        for &a in &support {
            let c = r.gen_range(cfg.coef_min..cfg.coef_max);
            row.scaled_add(c, &atoms.row(a));
        }
        supports.push(support);
    }
    Ok(SparseDictionaryData {
        atoms,
        rows,
        supports,
        labels: None,
    })
}

/// Layout of the class-structured dictionary benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OntologyBenchConfig {
    pub rows: usize,
    pub d: usize,
    pub groups: usize,
    pub classes_per_group: usize,
    pub noise_atoms: usize,
    pub coef_min: f64,
    pub coef_max: f64,
    pub seed: u64,
}

impl Default for OntologyBenchConfig {
    fn default() -> Self {
        // 8 group + 32 class + 24 noise atoms = 64 atoms, 3 active per row.
        OntologyBenchConfig {
            rows: 50_000,
            d: 32,
            groups: 8,
            classes_per_group: 4,
            noise_atoms: 24,
            coef_min: 0.5,
            coef_max: 1.5,
            seed: 0,
        }
    }
}

impl OntologyBenchConfig {
    pub fn n_classes(&self) -> usize {
        self.groups * self.classes_per_group
    }

    pub fn n_atoms(&self) -> usize {
        self.groups + self.n_classes() + self.noise_atoms
    }
}

/// Sparse dictionary data whose supports follow a class structure. Atoms are
/// laid out as `[group atoms | class atoms | noise atoms]`; a row of class `c`
/// in group `g = c / classes_per_group` activates group atom `g`, class atom
/// `c`, and one uniformly drawn noise atom. Labels are the class ids.
pub fn ontology_benchmark(cfg: &OntologyBenchConfig) -> Result<SparseDictionaryData> {
    let dc = DictionaryConfig {
        rows: cfg.rows,
        d: cfg.d,
        n_atoms: cfg.n_atoms(),
        active: 3,
        coef_min: cfg.coef_min,
        coef_max: cfg.coef_max,
        seed: cfg.seed,
    };
    check_coefs(&dc)?;
    if cfg.groups == 0 || cfg.classes_per_group == 0 || cfg.noise_atoms == 0 {
        return Err(Error::invalid("groups, classes_per_group and noise_atoms must be ≥ 1"));
    }
    let atoms = unit_atoms(dc.n_atoms, cfg.d, cfg.seed);
    let n_classes = cfg.n_classes();
    let mut r = rng(cfg.seed.wrapping_add(1));
    let mut rows = Array2::zeros((cfg.rows, cfg.d));
    let mut supports = Vec::with_capacity(cfg.rows);
    let mut labels = Vec::with_capacity(cfg.rows);
    for mut row in rows.rows_mut() {
        let c = r.gen_range(0..n_classes);
        let g = c / cfg.classes_per_group;
        let noise = cfg.groups + n_classes + r.gen_range(0..cfg.noise_atoms);
        let support = vec![g, cfg.groups + c, noise];
        for &a in &support {
            let coef = r.gen_range(cfg.coef_min..cfg.coef_max);
            row.scaled_add(coef, &atoms.row(a));
        }
        supports.push(support);
        labels.push(c as u32);
    }
    Ok(SparseDictionaryData {
        atoms,
        rows,
        supports,
        labels: Some(labels),
    })
}

/// Three-level hierarchy matching [`ontology_benchmark`]: a root, one node per
/// group, and the classes as leaves in class order.
pub fn benchmark_hierarchy(cfg: &OntologyBenchConfig) -> HierarchyFile {
    let mut nodes = vec![HierarchyNode {
        id: "root".into(),
        name: "root".into(),
    }];
    let mut edges = Vec::new();
    let mut leaves = Vec::new();
    for g in 0..cfg.groups {
        let gid = format!("g{g:02}");
        nodes.push(HierarchyNode {
            id: gid.clone(),
            name: format!("group {g}"),
        });
        edges.push((gid.clone(), "root".to_string()));
        for j in 0..cfg.classes_per_group {
            let c = g * cfg.classes_per_group + j;
            let cid = format!("c{c:03}");
            nodes.push(HierarchyNode {
                id: cid.clone(),
                name: format!("class {c}"),
            });
            edges.push((cid.clone(), gid.clone()));
            leaves.push(cid);
        }
    }
    HierarchyFile { nodes, edges, leaves }
}

/// Isotropic Gaussian blobs: class `c` is centered at `centers[c]`.
pub fn blobs(centers: &Array2<f64>, per_class: usize, std: f64, seed: u64) -> (Array2<f64>, Vec<u32>) {
    let (k, d) = centers.dim();
    let mut r = rng(seed);
    let mut rows = Array2::zeros((k * per_class, d));
    let mut labels = Vec::with_capacity(k * per_class);
    for c in 0..k {
        for i in 0..per_class {
            let mut row = rows.row_mut(c * per_class + i);
            for (j, v) in row.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(&mut r);
                *v = centers[[c, j]] + std * e;
            }
            labels.push(c as u32);
        }
    }
    (rows, labels)
}

/// Adds i.i.d. `N(0, sigma²)` noise to every entry.
pub fn add_noise(rows: &Array2<f64>, sigma: f64, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    rows.mapv(|v| {
        let e: f64 = StandardNormal.sample(&mut r);
        v + sigma * e
    })
}

/// Shifts every row by `offset`.
pub fn shift(rows: &Array2<f64>, offset: &Array1<f64>) -> Array2<f64> {
    rows + offset
}

/// Mean over ground-truth atoms of the best cosine similarity to any decoder
/// column (`w_dec` is `d × n`).
pub fn mean_max_cosine(atoms: &Array2<f64>, w_dec: &Array2<f64>) -> f64 {
    let norms: Vec<f64> = w_dec.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let mut total = 0.0;
    for a in atoms.rows() {
        let an = a.dot(&a).sqrt();
        let best = w_dec
            .columns()
            .into_iter()
            .zip(&norms)
            .filter(|(_, &n)| n > 0.0)
            .map(|(c, &n)| c.dot(&a) / (n * an))
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    total / atoms.nrows() as f64
}
