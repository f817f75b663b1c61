//! Core graph values: undirected simple graphs with node features, dataset
//! containers with split tags, connected-subgraph extraction, and PageRank
//! node importance.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

/// An undirected simple graph: symmetric 0/1 adjacency, zero diagonal, one
/// feature row per node, optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub adj: Array2<u8>,
    pub feats: Array2<f64>,
    pub label: Option<usize>,
}

/// First violated invariant found by [`Graph::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphViolation {
    #[error("adjacency is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("asymmetric adjacency at ({i},{j})")]
    Asymmetric { i: usize, j: usize },
    #[error("self-loop at node {v}")]
    SelfLoop { v: usize },
    #[error("non-binary adjacency entry {value} at ({i},{j})")]
    NonBinary { i: usize, j: usize, value: u8 },
    #[error("feature rows {rows} do not match node count {n}")]
    FeatureRows { rows: usize, n: usize },
    #[error("non-finite feature at node {v}, column {col}")]
    NonFiniteFeature { v: usize, col: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("node index {v} out of range for graph with {n} nodes")]
    NodeOutOfRange { v: usize, n: usize },
    #[error("PageRank did not converge after {max_iter} iterations (residual {residual:.3e})")]
    PageRankDiverged { max_iter: usize, residual: f64 },
    #[error("invalid PageRank parameter: {0}")]
    BadPageRankParam(String),
    #[error("seed fraction {0} outside (0, 0.2]")]
    BadSeedFraction(f64),
    #[error("dataset of {n} graphs too small for an attacker seed split at fraction {fraction}")]
    DatasetTooSmall { n: usize, fraction: f64 },
}

impl Graph {
    /// Builds a graph from an edge list; edges are symmetrized, self-loops
    /// and duplicates dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], feats: Array2<f64>, label: Option<usize>) -> Self {
        let mut adj = Array2::<u8>::zeros((n, n));
        for &(i, j) in edges {
            if i != j && i < n && j < n {
                adj[[i, j]] = 1;
                adj[[j, i]] = 1;
            }
        }
        Graph { adj, feats, label }
    }

    pub fn n(&self) -> usize {
        self.adj.nrows()
    }

    pub fn feat_dim(&self) -> usize {
        self.feats.ncols()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[[i, j]] != 0
    }

    /// Sets or clears the undirected edge {i, j}; no-op on the diagonal.
    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        if i == j {
            return;
        }
        let v = u8::from(present);
        self.adj[[i, j]] = v;
        self.adj[[j, i]] = v;
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj.row(v).into_iter().enumerate().filter_map(|(u, &a)| (a != 0).then_some(u))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj.row(v).iter().map(|&a| a as usize).sum()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|v| self.degree(v)).collect()
    }

    /// Undirected edge list with i < j.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adj[[i, j]] != 0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(|&a| a as usize).sum::<usize>() / 2
    }

    pub fn adj_f64(&self) -> Array2<f64> {
        self.adj.mapv(f64::from)
    }

    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self, num_classes: Option<usize>) -> Result<(), GraphViolation> {
        let (rows, cols) = (self.adj.nrows(), self.adj.ncols());
        if rows != cols {
            return Err(GraphViolation::NotSquare { rows, cols });
        }
        let n = rows;
        for i in 0..n {
            if self.adj[[i, i]] != 0 {
                return Err(GraphViolation::SelfLoop { v: i });
            }
            for j in 0..n {
                let a = self.adj[[i, j]];
                if a > 1 {
                    return Err(GraphViolation::NonBinary { i, j, value: a });
                }
                if a != self.adj[[j, i]] {
                    return Err(GraphViolation::Asymmetric { i, j });
                }
            }
        }
        if self.feats.nrows() != n {
            return Err(GraphViolation::FeatureRows { rows: self.feats.nrows(), n });
        }
        for v in 0..n {
            for (col, x) in self.feats.row(v).iter().enumerate() {
                if !x.is_finite() {
                    return Err(GraphViolation::NonFiniteFeature { v, col });
                }
            }
        }
        if let (Some(label), Some(classes)) = (self.label, num_classes) {
            if label >= classes {
                return Err(GraphViolation::LabelOutOfRange { label, classes });
            }
        }
        Ok(())
    }
}

/// Per-graph split assignment within a [`Dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    TargetTrain,
    AttackerSeed,
    Eval,
}

/// A graph-classification dataset: graphs, class count, feature width, and
/// per-graph split tags. Immutable after construction and splitting.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feat_dim: usize,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(graphs: Vec<Graph>, num_classes: usize, feat_dim: usize) -> Self {
        let splits = vec![Split::Eval; graphs.len()];
        Dataset { graphs, num_classes, feat_dim, splits }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }

    pub fn graphs_of(&self, split: Split) -> Vec<&Graph> {
        self.indices_of(split).into_iter().map(|i| &self.graphs[i]).collect()
    }

    /// Validates every graph against the dataset contract.
    pub fn validate(&self) -> Result<(), (usize, GraphViolation)> {
        for (i, g) in self.graphs.iter().enumerate() {
            g.validate(Some(self.num_classes)).map_err(|e| (i, e))?;
            if g.feat_dim() != self.feat_dim {
                return Err((
                    i,
                    GraphViolation::FeatureRows { rows: g.feats.ncols(), n: self.feat_dim },
                ));
            }
        }
        Ok(())
    }
}

/// An ordered, connected node selection inside a host graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgraphSelection {
    pub nodes: Vec<usize>,
    pub host_n: usize,
}

impl SubgraphSelection {
    /// True when the selected nodes induce a connected subgraph of `host`.
    pub fn is_connected_in(&self, host: &Graph) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let set: HashSet<usize> = self.nodes.iter().copied().collect();
        let mut seen = HashSet::new();
        let mut stack = vec![self.nodes[0]];
        seen.insert(self.nodes[0]);
        while let Some(v) = stack.pop() {
            for u in host.neighbors(v) {
                if set.contains(&u) && seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        seen.len() == set.len()
    }
}

/// Tracks which unordered graph pairs a mixing generator has consumed.
#[derive(Debug, Clone, Default)]
pub struct PairRegistry {
    used: HashSet<(usize, usize)>,
}

impl PairRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(a: usize, b: usize) -> (usize, usize) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Records a pair; returns false when it was already present.
    pub fn record(&mut self, a: usize, b: usize) -> bool {
        self.used.insert(Self::key(a, b))
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.used.contains(&Self::key(a, b))
    }

    pub fn reset(&mut self) {
        self.used.clear();
    }

    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }
}

/// Breadth-first connected selection of `size` nodes expanding from `center`.
///
/// Visit order within each frontier is randomized by `rng`, so repeated draws
/// differ while staying deterministic under a seeded generator. If the
/// connected component of `center` has fewer than `size` nodes the whole
/// component is returned.
pub fn induced_subgraph_bfs(
    g: &Graph,
    center: usize,
    size: usize,
    rng: &mut impl Rng,
) -> Result<SubgraphSelection, GraphError> {
    let n = g.n();
    if center >= n {
        return Err(GraphError::NodeOutOfRange { v: center, n });
    }
    let size = size.max(1);
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(size);
    let mut queue = std::collections::VecDeque::new();
    visited[center] = true;
    queue.push_back(center);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        if order.len() == size {
            break;
        }
        let mut next: Vec<usize> = g.neighbors(v).filter(|&u| !visited[u]).collect();
        next.shuffle(rng);
        for u in next {
            visited[u] = true;
            queue.push_back(u);
        }
    }
    // Drain any queued nodes still needed to reach `size`.
    while order.len() < size {
        match queue.pop_front() {
            Some(v) => order.push(v),
            None => break,
        }
    }
    Ok(SubgraphSelection { nodes: order, host_n: n })
}

/// Size of the connected component containing `v`.
pub fn component_size(g: &Graph, v: usize) -> usize {
    let mut seen = vec![false; g.n()];
    let mut stack = vec![v];
    seen[v] = true;
    let mut count = 0;
    while let Some(u) = stack.pop() {
        count += 1;
        for w in g.neighbors(u) {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    count
}

/// PageRank with uniform teleport; dangling nodes redistribute uniformly.
///
/// Power iteration runs until the L1 step residual drops below `tol`.
pub fn pagerank(
    g: &Graph,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, GraphError> {
    if !(0.0..1.0).contains(&damping) || damping == 0.0 {
        return Err(GraphError::BadPageRankParam(format!("damping {damping}")));
    }
    if tol <= 0.0 {
        return Err(GraphError::BadPageRankParam(format!("tol {tol}")));
    }
    let n = g.n();
    if n == 0 {
        return Err(GraphError::BadPageRankParam("empty graph".into()));
    }
    let deg = g.degrees();
    let uniform = 1.0 / n as f64;
    let mut x = vec![uniform; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let dangling_mass: f64 =
            x.iter().zip(&deg).filter(|(_, &d)| d == 0).map(|(xi, _)| xi).sum();
        let base = (1.0 - damping) * uniform + damping * dangling_mass * uniform;
        next.iter_mut().for_each(|v| *v = base);
        for v in 0..n {
            if deg[v] > 0 {
                let share = damping * x[v] / deg[v] as f64;
                for u in g.neighbors(v) {
                    next[u] += share;
                }
            }
        }
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < tol {
            return Ok(x);
        }
    }
    Err(GraphError::PageRankDiverged { max_iter, residual })
}

/// Default PageRank used for node-importance ranking.
pub fn pagerank_scores(g: &Graph) -> Vec<f64> {
    pagerank(g, 0.85, 1e-10, 500).expect("PageRank on a valid graph converges")
}

/// Assigns splits: 80% target-train, `seed_fraction` attacker-seed, rest eval.
///
/// Assignment is a seeded random permutation, stratified by class whenever
/// every class has at least `ceil(1/seed_fraction)` members.
pub fn make_splits(
    ds: &mut Dataset,
    seed_fraction: f64,
    rng: &mut impl Rng,
) -> Result<(), GraphError> {
    if !(seed_fraction > 0.0 && seed_fraction <= 0.2) {
        return Err(GraphError::BadSeedFraction(seed_fraction));
    }
    let n = ds.len();
    let n_train = (0.8 * n as f64).round() as usize;
    let n_seed = (seed_fraction * n as f64).round() as usize;
    if n_seed < 1 || n_train + n_seed > n {
        return Err(GraphError::DatasetTooSmall { n, fraction: seed_fraction });
    }

    let min_members = (1.0 / seed_fraction).ceil() as usize;
    let all_labeled = ds.graphs.iter().all(|g| g.label.is_some());
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    if all_labeled {
        for (i, g) in ds.graphs.iter().enumerate() {
            by_class[g.label.unwrap()].push(i);
        }
    }
    let stratify = all_labeled
        && ds.num_classes >= 1
        && by_class.iter().all(|c| c.len() >= min_members);

    if stratify {
        for group in &mut by_class {
            group.shuffle(rng);
        }
        let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let seed_counts = largest_remainder(&sizes, n_seed);
        let remaining: Vec<usize> =
            sizes.iter().zip(&seed_counts).map(|(m, s)| m - s).collect();
        let train_counts = largest_remainder(&remaining, n_train);
        for (c, group) in by_class.iter().enumerate() {
            for (pos, &idx) in group.iter().enumerate() {
                ds.splits[idx] = if pos < seed_counts[c] {
                    Split::AttackerSeed
                } else if pos < seed_counts[c] + train_counts[c] {
                    Split::TargetTrain
                } else {
                    Split::Eval
                };
            }
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (pos, &idx) in perm.iter().enumerate() {
            ds.splits[idx] = if pos < n_train {
                Split::TargetTrain
            } else if pos < n_train + n_seed {
                Split::AttackerSeed
            } else {
                Split::Eval
            };
        }
    }
    Ok(())
}

/// Apportions `total` among groups proportionally to `weights`, flooring and
/// then handing leftovers to the largest fractional remainders. Never
/// allocates more than a group's weight.
fn largest_remainder(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut counts: Vec<usize> = Vec::with_capacity(weights.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    let mut assigned = 0;
    for (i, &w) in weights.iter().enumerate() {
        let quota = total as f64 * w as f64 / sum as f64;
        let base = (quota.floor() as usize).min(w);
        counts.push(base);
        assigned += base;
        remainders.push((quota - base as f64, i));
    }
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut left = total.saturating_sub(assigned);
    let mut k = 0;
    while left > 0 {
        let (_, i) = remainders[k % remainders.len()];
        if counts[i] < weights[i] {
            counts[i] += 1;
            left -= 1;
        }
        k += 1;
        if k > remainders.len() * (total + 1) {
            break;
        }
    }
    counts
}
