//! Random hypernym DAGs and a brute-force reference for the ontology metrics.
//! The reference works only from the raw edge list.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use saelab::ontology::{HierarchyFile, HierarchyNode};

pub struct RandomDag {
    pub file: HierarchyFile,
    /// `(child, parent)` as node positions.
    pub edges: Vec<(usize, usize)>,
    pub ids: Vec<String>,
    /// Node position of each class.
    pub leaves: Vec<usize>,
    /// `up[c][h]`: upward distance from class `c`'s leaf to node `h`.
    up: Vec<Vec<Option<usize>>>,
}

/// Up to `max_nodes` nodes and `max_leaves` leaves. Edges always point from a
/// higher to a lower position, so the graph is acyclic. Some internal nodes
/// are left without parents, which makes forests possible.
pub fn random_dag(rng: &mut ChaCha8Rng, max_nodes: usize, max_leaves: usize) -> RandomDag {
    let n = rng.gen_range(2..=max_nodes);
    let n_leaves = rng.gen_range(1..=max_leaves.min(n - 1));
    let n_internal = n - n_leaves;
    let mut edges = Vec::new();
    for i in 1..n_internal {
        if rng.gen_bool(0.05) {
            continue;
        }
        let k = rng.gen_range(1..=2.min(i));
        for p in rand::seq::index::sample(rng, i, k) {
            edges.push((i, p));
        }
    }
    for l in n_internal..n {
        let k = rng.gen_range(1..=3.min(n_internal));
        for p in rand::seq::index::sample(rng, n_internal, k) {
            edges.push((l, p));
        }
    }
    // every internal node needs a leaf below it
    for i in 0..n_internal {
        if !edges.iter().any(|&(_, p)| p == i) {
            let l = rng.gen_range(n_internal..n);
            edges.push((l, i));
        }
    }
    // short ids from a small alphabet so that ties in leaf-set size compare ids
    let mut ids: Vec<String> = (0..n).map(|i| format!("{:03}", i * 7 % 1000)).collect();
    ids.shuffle(rng);
    let mut leaves: Vec<usize> = (n_internal..n).collect();
    leaves.shuffle(rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let file = HierarchyFile {
        nodes: order
            .iter()
            .map(|&i| HierarchyNode {
                id: ids[i].clone(),
                name: String::new(),
            })
            .collect(),
        edges: edges.iter().map(|&(c, p)| (ids[c].clone(), ids[p].clone())).collect(),
        leaves: leaves.iter().map(|&l| ids[l].clone()).collect(),
    };
    let mut g = RandomDag {
        file,
        edges,
        ids,
        leaves,
        up: Vec::new(),
    };
    g.up = g.leaves.iter().map(|&l| g.distances(l)).collect();
    g
}

impl RandomDag {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    /// Upward BFS distances from `from` to every node.
    fn distances(&self, from: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n()];
        dist[from] = Some(0);
        let mut q = VecDeque::from([from]);
        while let Some(v) = q.pop_front() {
            let dv = dist[v].unwrap();
            for &(c, p) in &self.edges {
                if c == v && dist[p].is_none() {
                    dist[p] = Some(dv + 1);
                    q.push_back(p);
                }
            }
        }
        dist
    }

    /// Classes whose leaf has a hypernym path to `h` (or is `h`).
    pub fn leaf_set(&self, h: usize) -> Vec<usize> {
        (0..self.leaves.len()).filter(|&c| self.up[c][h].is_some()).collect()
    }

    /// `(lch id, height, coverage)` by enumerating every node.
    pub fn brute(&self, classes: &[usize]) -> Option<(String, f64, f64)> {
        let mut best: Option<(usize, String, usize)> = None;
        for h in 0..self.n() {
            let ls = self.leaf_set(h);
            if !classes.iter().all(|c| ls.contains(c)) {
                continue;
            }
            let cand = (ls.len(), self.ids[h].clone(), h);
            if best.as_ref().is_none_or(|b| (cand.0, &cand.1) < (b.0, &b.1)) {
                best = Some(cand);
            }
        }
        let (size, id, h) = best?;
        let height = classes.iter().map(|&c| self.up[c][h].unwrap() as f64).sum::<f64>() / classes.len() as f64;
        Some((id, height, classes.len() as f64 / size as f64))
    }
}
