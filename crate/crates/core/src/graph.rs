//! Sparse undirected region graphs and the row-wise top-K edge selection
//! shared by the semantic and spatial builders.

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{iou, BBox};

/// Graph construction hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Edges kept per row before symmetrization.
    pub k: usize,
    /// IoU above which a pair is treated as the same object and never linked.
    pub overlap_threshold: f64,
    /// Scale of the spatial distance weight.
    pub lambda: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 64,
            overlap_threshold: 0.5,
            lambda: crate::geometry::DEFAULT_LAMBDA,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "overlap_threshold must lie in (0, 1], got {}",
                self.overlap_threshold
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Symmetric binary pair gate; `true` means the pair may be linked.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMask(Array2<bool>);

impl OverlapMask {
    pub fn from_array(a: Array2<bool>) -> Self {
        Self(a)
    }

    /// Every off-diagonal pair allowed.
    pub fn all_pairs(n: usize) -> Self {
        Self(Array2::from_shape_fn((n, n), |(i, j)| i != j))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.0[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.0
    }
}

/// Zeroes self pairs and pairs whose IoU exceeds `tau`.
pub fn overlap_mask(boxes: &[BBox], tau: f64) -> OverlapMask {
    let n = boxes.len();
    let mut m = Array2::from_elem((n, n), false);
    for i in 0..n {
        for j in (i + 1)..n {
            let keep = iou(&boxes[i], &boxes[j]) <= tau;
            m[[i, j]] = keep;
            m[[j, i]] = keep;
        }
    }
    OverlapMask(m)
}

/// Dense pairwise relatedness; masked entries are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(pub Array2<f64>);

impl ScoreMatrix {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }
}

/// Undirected graph without self loops over `n` nodes, stored as a sorted
/// list of `(i, j)` pairs with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Adjacency {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
        }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        Self { n, edges }
    }

    /// Builds a graph from unordered pairs. Duplicates and either orientation
    /// are accepted; self loops and out-of-range nodes are rejected.
    pub fn from_edges(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::InvalidConfig(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidConfig(format!("self loop at node {a}")));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self { n, edges })
    }

    /// Reads the upper triangle of a dense 0/1 matrix, which must be
    /// symmetric with a zero diagonal.
    pub fn from_dense(m: &Array2<f64>) -> Result<Self> {
        let n = m.nrows();
        check_dim("adjacency columns", n, m.ncols())?;
        let mut edges = Vec::new();
        for i in 0..n {
            if m[[i, i]] != 0.0 {
                return Err(Error::InvalidConfig(format!("nonzero diagonal at {i}")));
            }
            for j in (i + 1)..n {
                if m[[i, j]] != m[[j, i]] {
                    return Err(Error::InvalidConfig(format!("asymmetric entry ({i}, {j})")));
                }
                if m[[i, j]] != 0.0 {
                    edges.push((i, j));
                }
            }
        }
        Ok(Self { n, edges })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Nonzero entries of the dense symmetric matrix.
    pub fn nnz(&self) -> usize {
        2 * self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i != j && self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    /// Sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            nb[i].push(j);
            nb[j].push(i);
        }
        for row in nb.iter_mut() {
            row.sort_unstable();
        }
        nb
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for &(i, j) in &self.edges {
            m[[i, j]] = 1.0;
            m[[j, i]] = 1.0;
        }
        m
    }

    /// Relabels nodes so that old node `perm[k]` becomes node `k`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_dim("permutation length", self.n, perm.len())?;
        let mut inverse = vec![usize::MAX; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Self::from_edges(self.n, self.edges.iter().map(|&(i, j)| (inverse[i], inverse[j])))
    }

    pub fn union(&self, other: &Adjacency) -> Result<Adjacency> {
        check_dim("graph union", self.n, other.n)?;
        let mut edges = Vec::with_capacity(self.edges.len() + other.edges.len());
        let (mut a, mut b) = (self.edges.iter().peekable(), other.edges.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&x), Some(&&y)) => match x.cmp(&y) {
                    Ordering::Less => {
                        edges.push(x);
                        a.next();
                    }
                    Ordering::Greater => {
                        edges.push(y);
                        b.next();
                    }
                    Ordering::Equal => {
                        edges.push(x);
                        a.next();
                        b.next();
                    }
                },
                (Some(&&x), None) => {
                    edges.push(x);
                    a.next();
                }
                (None, Some(&&y)) => {
                    edges.push(y);
                    b.next();
                }
                (None, None) => break,
            }
        }
        Ok(Adjacency { n: self.n, edges })
    }

    pub fn intersection(&self, other: &Adjacency) -> Result<Adjacency> {
        check_dim("graph intersection", self.n, other.n)?;
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(i, j)| other.contains(i, j))
            .collect();
        Ok(Adjacency { n: self.n, edges })
    }
}

/// `E = E_sem ∪ E_spa`.
pub fn fuse_graphs(sem: &Adjacency, spa: &Adjacency) -> Result<Adjacency> {
    sem.union(spa)
}

/// Descending score, then ascending unordered pair key. The secondary key is
/// independent of which endpoint owns the row.
fn rank(i: usize, a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| (i.min(a.0), i.max(a.0)).cmp(&(i.min(b.0), i.max(b.0))))
}

/// Directed row selection: for each row, up to `k` columns with the highest
/// scores among entries accepted by `candidate`. Columns are returned sorted.
pub fn select_rows_where(
    scores: &Array2<f64>,
    k: usize,
    candidate: impl Fn(usize, usize, f64) -> bool,
) -> Vec<Vec<usize>> {
    let n = scores.nrows();
    let mut rows = Vec::with_capacity(n);
    let mut buf: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        buf.extend(
            scores
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &s)| j != i && candidate(i, j, s))
                .map(|(j, &s)| (j, s)),
        );
        if buf.len() > k {
            buf.select_nth_unstable_by(k - 1, |&a, &b| rank(i, a, b));
            buf.truncate(k);
        }
        let mut cols: Vec<usize> = buf.iter().map(|&(j, _)| j).collect();
        cols.sort_unstable();
        rows.push(cols);
    }
    rows
}

/// Row selection on a normalized score matrix: only strictly positive
/// entries are selectable.
pub fn select_rows(scores: &ScoreMatrix, k: usize) -> Vec<Vec<usize>> {
    select_rows_where(&scores.0, k, |_, _, s| s > 0.0)
}

/// OR-symmetrization of a directed row selection.
pub fn symmetrize(rows: &[Vec<usize>]) -> Adjacency {
    let n = rows.len();
    let mut edges: Vec<(usize, usize)> = rows
        .iter()
        .enumerate()
        .flat_map(|(i, cols)| cols.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    Adjacency { n, edges }
}

/// Keeps the top `k` entries of every row, binarizes and symmetrizes.
pub fn topk_select(scores: &ScoreMatrix, k: usize) -> Adjacency {
    symmetrize(&select_rows(scores, k))
}
