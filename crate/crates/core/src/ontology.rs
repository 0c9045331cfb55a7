//! Class hierarchies and the ontological feature metrics.
//!
//! A [`Hierarchy`] is a DAG of hypernym edges over string ids with a
//! designated leaf set Ω. Leaf `i` in the JSON `leaves` array is class `i` of
//! labeled datasets. `L(h)` is the set of leaves with a hypernym path to `h`
//! (a leaf's own set contains itself), the LCH of a class set is the common
//! ancestor with the smallest leaf set, and coverage is `|C| / |L(lch)|`.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use fixedbitset::FixedBitSet;
use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::csv_err;
use crate::sae::{encode_batch, SaeArchitecture, SaeParams};
use crate::scalar::Scalar;
use crate::store::DatasetView;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyNode {
    pub id: String,
    #[serde(default)]
    pub name: String,
}

/// On-disk form: `{"nodes": [{"id", "name"}], "edges": [[child, parent]], "leaves": [id]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyFile {
    pub nodes: Vec<HierarchyNode>,
    pub edges: Vec<(String, String)>,
    pub leaves: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    nodes: Vec<HierarchyNode>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    /// Node index of each leaf, in class order.
    leaves: Vec<usize>,
    /// Class index of each node that is a leaf.
    leaf_class: Vec<Option<usize>>,
    /// Leaf sets as bitsets over class indices.
    leaf_sets: Vec<FixedBitSet>,
}

impl Hierarchy {
    pub fn from_file(file: HierarchyFile) -> Result<Self> {
        let n = file.nodes.len();
        if n == 0 {
            return Err(Error::Hierarchy("hierarchy has no nodes".into()));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, node) in file.nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::Hierarchy(format!("duplicate node id {:?}", node.id)));
            }
        }
        let lookup = |id: &str, what: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Hierarchy(format!("unknown id {id:?} in {what}")))
        };
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for (c, p) in &file.edges {
            let (ci, pi) = (lookup(c, "edges")?, lookup(p, "edges")?);
            if ci == pi {
                return Err(Error::Hierarchy(format!("cycle: {c:?} is its own parent")));
            }
            if !parents[ci].contains(&pi) {
                parents[ci].push(pi);
                children[pi].push(ci);
            }
        }
        let mut leaves = Vec::with_capacity(file.leaves.len());
        let mut leaf_class = vec![None; n];
        for id in &file.leaves {
            let li = lookup(id, "leaves")?;
            if leaf_class[li].is_some() {
                return Err(Error::Hierarchy(format!("leaf {id:?} listed twice")));
            }
            leaf_class[li] = Some(leaves.len());
            leaves.push(li);
        }
        if leaves.is_empty() {
            return Err(Error::Hierarchy("hierarchy has no leaves".into()));
        }
        if n > 1 {
            if let Some(&orphan) = leaves.iter().find(|&&l| parents[l].is_empty()) {
                return Err(Error::Hierarchy(format!(
                    "orphan leaf {:?} has no hypernym",
                    file.nodes[orphan].id
                )));
            }
        }

        // Kahn's algorithm from the bottom: a node is ready once all of its
        // children are done.
        let mut pending: Vec<usize> = children.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &p in &parents[v] {
                pending[p] -= 1;
                if pending[p] == 0 {
                    queue.push_back(p);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| pending[i] > 0).expect("some node is on a cycle");
            return Err(Error::Hierarchy(format!(
                "cycle detected through {:?}",
                file.nodes[stuck].id
            )));
        }

        let mut leaf_sets = vec![FixedBitSet::with_capacity(leaves.len()); n];
        for &v in &order {
            let mut set = std::mem::take(&mut leaf_sets[v]);
            if let Some(c) = leaf_class[v] {
                set.insert(c);
            }
            for &ch in &children[v] {
                set.union_with(&leaf_sets[ch]);
            }
            leaf_sets[v] = set;
        }
        if let Some(dead) = (0..n).find(|&i| leaf_sets[i].is_clear()) {
            return Err(Error::Hierarchy(format!(
                "node {:?} is not an ancestor of any leaf",
                file.nodes[dead].id
            )));
        }
        Ok(Hierarchy {
            nodes: file.nodes,
            index,
            parents,
            leaves,
            leaf_class,
            leaf_sets,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: HierarchyFile =
            serde_json::from_str(text).map_err(|e| Error::Hierarchy(format!("malformed hierarchy JSON: {e}")))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_file(&self) -> HierarchyFile {
        let mut edges = Vec::new();
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                edges.push((self.nodes[c].id.clone(), self.nodes[p].id.clone()));
            }
        }
        HierarchyFile {
            nodes: self.nodes.clone(),
            edges,
            leaves: self.leaves.iter().map(|&l| self.nodes[l].id.clone()).collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn node_id(&self, node: usize) -> &str {
        &self.nodes[node].id
    }

    pub fn node_name(&self, node: usize) -> &str {
        &self.nodes[node].name
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.parents[i].is_empty()).collect()
    }

    /// Node index of class `c`.
    pub fn leaf_node(&self, class: usize) -> usize {
        self.leaves[class]
    }

    /// Class index of a leaf node.
    pub fn leaf_class(&self, node: usize) -> Option<usize> {
        self.leaf_class[node]
    }

    /// `L(node)` as class indices.
    pub fn leaf_set(&self, node: usize) -> &FixedBitSet {
        &self.leaf_sets[node]
    }

    pub fn leaf_set_of(&self, id: &str) -> Result<Vec<usize>> {
        let node = self
            .node_index(id)
            .ok_or_else(|| Error::Hierarchy(format!("unknown node {id:?}")))?;
        Ok(self.leaf_sets[node].ones().collect())
    }

    fn class_set(&self, classes: &[usize]) -> Result<FixedBitSet> {
        if classes.is_empty() {
            return Err(Error::Hierarchy("class set is empty".into()));
        }
        let mut set = FixedBitSet::with_capacity(self.n_leaves());
        for &c in classes {
            if c >= self.n_leaves() {
                return Err(Error::Hierarchy(format!(
                    "class {c} is not a leaf (hierarchy has {} leaves)",
                    self.n_leaves()
                )));
            }
            set.insert(c);
        }
        Ok(set)
    }

    /// Ancestors-or-self of a node.
    fn ancestors(&self, node: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n_nodes()];
        let mut stack = vec![node];
        let mut out = Vec::new();
        seen[node] = true;
        while let Some(v) = stack.pop() {
            out.push(v);
            for &p in &self.parents[v] {
                if !seen[p] {
                    seen[p] = true;
                    stack.push(p);
                }
            }
        }
        out
    }

    /// Lowest common hypernym: among nodes whose leaf set contains every
    /// class, the one with the smallest leaf set, ties by smallest id.
    pub fn lch(&self, classes: &[usize]) -> Result<usize> {
        let set = self.class_set(classes)?;
        let first = self.leaves[set.ones().next().expect("nonempty")];
        let mut best: Option<usize> = None;
        for v in self.ancestors(first) {
            if !set.is_subset(&self.leaf_sets[v]) {
                continue;
            }
            best = Some(match best {
                None => v,
                Some(b) => {
                    let key = |x: usize| (self.leaf_sets[x].count_ones(..), &self.nodes[x].id);
                    if key(v) < key(b) {
                        v
                    } else {
                        b
                    }
                }
            });
        }
        best.ok_or_else(|| Error::Hierarchy("classes share no common ancestor".into()))
    }

    /// Shortest hypernym-path length from `from` up to `to`, if `to` is an
    /// ancestor-or-self.
    pub fn up_distance(&self, from: usize, to: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.n_nodes()];
        let mut queue = VecDeque::from([from]);
        dist[from] = 0;
        while let Some(v) = queue.pop_front() {
            if v == to {
                return Some(dist[v]);
            }
            for &p in &self.parents[v] {
                if dist[p] == usize::MAX {
                    dist[p] = dist[v] + 1;
                    queue.push_back(p);
                }
            }
        }
        None
    }

    /// Mean shortest hypernym distance from each class to the LCH.
    pub fn lch_height(&self, classes: &[usize]) -> Result<f64> {
        Ok(self.lch_metrics(classes)?.height)
    }

    pub fn coverage(&self, classes: &[usize]) -> Result<f64> {
        Ok(self.lch_metrics(classes)?.coverage)
    }

    /// LCH node, height and coverage of a class set (duplicates ignored).
    pub fn lch_metrics(&self, classes: &[usize]) -> Result<LchMetrics> {
        let set = self.class_set(classes)?;
        let node = self.lch(classes)?;
        let mut total = 0usize;
        for c in set.ones() {
            total += self
                .up_distance(self.leaves[c], node)
                .expect("the lch is an ancestor of every class");
        }
        let k = set.count_ones(..);
        Ok(LchMetrics {
            node,
            height: total as f64 / k as f64,
            coverage: k as f64 / self.leaf_sets[node].count_ones(..) as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LchMetrics {
    pub node: usize,
    pub height: f64,
    pub coverage: f64,
}

/// Anything that maps input rows to nonnegative feature activations.
pub trait FeatureEncoder<F: Scalar> {
    fn n_features(&self) -> usize;
    fn encode(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>>;
}

pub struct SaeEncoder<'a, F> {
    pub params: &'a SaeParams<F>,
    pub arch: &'a SaeArchitecture,
}

impl<F: Scalar> FeatureEncoder<F> for SaeEncoder<'_, F> {
    fn n_features(&self) -> usize {
        self.params.n()
    }

    fn encode(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        encode_batch(self.params, self.arch, x)
    }
}

/// `z_k = max(0, u_k · x)` for Gaussian unit directions `u_k`.
pub struct RandomDirections<F> {
    pub directions: Array2<F>,
}

impl<F: Scalar> RandomDirections<F> {
    pub fn new(d: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut directions = Array2::from_shape_simple_fn((n, d), || F::lit(StandardNormal.sample(&mut rng)));
        for mut row in directions.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > F::zero() {
                row /= norm;
            }
        }
        RandomDirections { directions }
    }
}

impl<F: Scalar> FeatureEncoder<F> for RandomDirections<F> {
    fn n_features(&self) -> usize {
        self.directions.nrows()
    }

    fn encode(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if x.ncols() != self.directions.ncols() {
            return Err(Error::DimMismatch {
                expected: self.directions.ncols(),
                found: x.ncols(),
            });
        }
        Ok(x.dot(&self.directions.t()).mapv(|v| v.max(F::zero())))
    }
}

/// `z_k = max(0, x_k)` on the raw coordinates.
pub struct RawNeurons {
    pub d: usize,
}

impl<F: Scalar> FeatureEncoder<F> for RawNeurons {
    fn n_features(&self) -> usize {
        self.d
    }

    fn encode(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if x.ncols() != self.d {
            return Err(Error::DimMismatch {
                expected: self.d,
                found: x.ncols(),
            });
        }
        Ok(x.mapv(|v| v.max(F::zero())))
    }
}

/// The classes one feature is associated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureClassSet {
    pub feature: usize,
    /// Sorted class indices whose firing rate reached the threshold.
    pub classes: Vec<usize>,
    /// Firing rate per class; 0 for classes with no rows.
    pub rates: Vec<f64>,
}

impl FeatureClassSet {
    pub fn is_active(&self) -> bool {
        !self.classes.is_empty()
    }
}

/// For every feature, the classes on which it fires (`z_k > 0`) for at least
/// `rate_threshold` of that class's rows.
pub fn activated_classes<F: Scalar, E: FeatureEncoder<F> + ?Sized>(
    encoder: &E,
    view: &DatasetView<'_>,
    rate_threshold: f64,
) -> Result<Vec<FeatureClassSet>> {
    if !(rate_threshold > 0.0 && rate_threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "rate threshold {rate_threshold} must lie in (0, 1]"
        )));
    }
    let labels = view
        .labels()
        .ok_or_else(|| Error::invalid("activated_classes needs a labeled dataset"))?;
    let n_classes = view.dataset().n_classes();
    let n = encoder.n_features();
    let mut fired = Array2::<u64>::zeros((n, n_classes));
    let mut class_rows = vec![0u64; n_classes];
    for (chunk_idx, chunk) in view.indices().chunks(CHUNK).enumerate() {
        let x = view.dataset().gather::<F>(chunk);
        let z = encoder.encode(x.view())?;
        for (r, row) in z.outer_iter().enumerate() {
            let c = labels[chunk_idx * CHUNK + r] as usize;
            class_rows[c] += 1;
            for (k, &v) in row.iter().enumerate() {
                if v > F::zero() {
                    fired[[k, c]] += 1;
                }
            }
        }
    }
    Ok((0..n)
        .map(|k| {
            let rates: Vec<f64> = (0..n_classes)
                .map(|c| {
                    if class_rows[c] == 0 {
                        0.0
                    } else {
                        fired[[k, c]] as f64 / class_rows[c] as f64
                    }
                })
                .collect();
            let classes = (0..n_classes)
                .filter(|&c| class_rows[c] > 0 && rates[c] >= rate_threshold)
                .collect();
            FeatureClassSet {
                feature: k,
                classes,
                rates,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyRow {
    pub feature: usize,
    pub k_classes: usize,
    pub lch_id: String,
    pub lch_height: f64,
    pub coverage: f64,
    pub single_class: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCount {
    pub threshold: f64,
    /// Multi-class features with coverage strictly above the threshold.
    pub count: usize,
    /// Same, counting single-class features too.
    pub count_including_single: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyReport {
    pub label: String,
    pub n_features: usize,
    pub n_inactive: usize,
    pub n_single_class: usize,
    pub n_multi_class: usize,
    pub counts: Vec<ThresholdCount>,
    /// One row per active feature, in feature order.
    pub rows: Vec<OntologyRow>,
}

impl OntologyReport {
    pub fn count_above(&self, threshold: f64) -> Option<usize> {
        self.counts.iter().find(|c| c.threshold == threshold).map(|c| c.count)
    }
}

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.99, 0.75];

pub fn ontology_report(
    label: &str,
    sets: &[FeatureClassSet],
    hierarchy: &Hierarchy,
    thresholds: &[f64],
) -> Result<OntologyReport> {
    let mut rows = Vec::new();
    for s in sets.iter().filter(|s| s.is_active()) {
        let m = hierarchy.lch_metrics(&s.classes)?;
        rows.push(OntologyRow {
            feature: s.feature,
            k_classes: s.classes.len(),
            lch_id: hierarchy.node_id(m.node).to_string(),
            lch_height: m.height,
            coverage: m.coverage,
            single_class: s.classes.len() == 1,
        });
    }
    let counts = thresholds
        .iter()
        .map(|&t| ThresholdCount {
            threshold: t,
            count: rows.iter().filter(|r| !r.single_class && r.coverage > t).count(),
            count_including_single: rows.iter().filter(|r| r.coverage > t).count(),
        })
        .collect();
    let n_single_class = rows.iter().filter(|r| r.single_class).count();
    Ok(OntologyReport {
        label: label.to_string(),
        n_features: sets.len(),
        n_inactive: sets.len() - rows.len(),
        n_single_class,
        n_multi_class: rows.len() - n_single_class,
        counts,
        rows,
    })
}

/// Association rule and report for any encoder.
pub fn encoder_report<F: Scalar, E: FeatureEncoder<F> + ?Sized>(
    label: &str,
    encoder: &E,
    view: &DatasetView<'_>,
    hierarchy: &Hierarchy,
    rate_threshold: f64,
    thresholds: &[f64],
) -> Result<OntologyReport> {
    if view.dataset().n_classes() > hierarchy.n_leaves() {
        return Err(Error::invalid(format!(
            "dataset has {} classes but the hierarchy only {} leaves",
            view.dataset().n_classes(),
            hierarchy.n_leaves()
        )));
    }
    let sets = activated_classes(encoder, view, rate_threshold)?;
    ontology_report(label, &sets, hierarchy, thresholds)
}

/// The same pipeline on `n` random unit directions.
pub fn random_baseline<F: Scalar>(
    n: usize,
    view: &DatasetView<'_>,
    hierarchy: &Hierarchy,
    rate_threshold: f64,
    thresholds: &[f64],
    seed: u64,
) -> Result<OntologyReport> {
    let enc = RandomDirections::<F>::new(view.dim(), n, seed);
    encoder_report("random", &enc, view, hierarchy, rate_threshold, thresholds)
}

/// The same pipeline on the raw input coordinates.
pub fn raw_neuron_baseline<F: Scalar>(
    view: &DatasetView<'_>,
    hierarchy: &Hierarchy,
    rate_threshold: f64,
    thresholds: &[f64],
) -> Result<OntologyReport> {
    let enc = RawNeurons { d: view.dim() };
    encoder_report::<F, _>("raw", &enc, view, hierarchy, rate_threshold, thresholds)
}

/// Writes `feature,k_classes,lch_id,lch_height,coverage,single_class`.
pub fn write_ontology_csv(report: &OntologyReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record([
        "feature",
        "k_classes",
        "lch_id",
        "lch_height",
        "coverage",
        "single_class",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in &report.rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
