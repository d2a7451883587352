//! Graph loading, sparse adjacency normalization and link-prediction edge splits.
//!
//! Text formats:
//!
//! * edges: one edge per line, two whitespace-separated 0-indexed node ids.
//!   Lines starting with `#` and blank lines are skipped.
//! * features: one node per line, `d` comma-separated reals, row order = node id.
//! * labels: one non-negative integer per line.
//!
//! CRLF line endings are accepted everywhere.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    IndexOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("feature matrix has {rows} rows but the graph has {n} nodes")]
    FeatureRows { rows: usize, n: usize },
    #[error("label vector has {len} entries but the graph has {n} nodes")]
    LabelCount { len: usize, n: usize },
    #[error("non-finite feature at node {node}, column {col}")]
    NonFiniteFeature { node: usize, col: usize },
    #[error("graph must have at least one node")]
    Empty,
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    Ratios((f64, f64, f64)),
    #[error("edge split needs at least {needed} edges, graph has {have}")]
    TooFewEdges { needed: usize, have: usize },
    #[error("requested {requested} negative edges but only {available} non-edges exist")]
    NotEnoughNonEdges { requested: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Undirected, unweighted attributed graph.
///
/// Edges are stored once, as `(i, j)` with `i < j`, sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a validated graph. Edge direction and duplicates are folded away;
    /// self-loops and out-of-range endpoints are errors.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if features.nrows() != n {
            return Err(GraphError::FeatureRows {
                rows: features.nrows(),
                n,
            });
        }
        for ((node, col), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(GraphError::NonFiniteFeature { node, col });
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::LabelCount { len: l.len(), n });
            }
        }
        let mut canon = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::IndexOutOfRange(a, b, n));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Self {
            n,
            edges: canon,
            features,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of distinct classes (`max label + 1`), if labelled.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            self.n,
            edges.iter().copied(),
            self.features.clone(),
            self.labels.clone(),
        )
    }

    /// Replaces the feature matrix with its per-column min-max rescaling into `[0, 1]`.
    /// Constant columns become zero.
    pub fn min_max_normalize_features(&mut self) {
        for mut col in self.features.columns_mut() {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            col.mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
        }
    }

    pub fn features_in_unit_interval(&self) -> bool {
        self.features.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn parse_edges(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok = parts
                .next()
                .ok_or_else(|| parse_err(path, idx + 1, "expected two node ids"))?;
            tok.parse::<usize>()
                .map_err(|_| parse_err(path, idx + 1, format!("invalid node id `{tok}`")))
        };
        let a = next()?;
        let b = next()?;
        if parts.next().is_some() {
            return Err(parse_err(path, idx + 1, "expected exactly two node ids"));
        }
        edges.push((a, b));
    }
    Ok(edges)
}

pub fn parse_features(path: &Path, text: &str) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for tok in line.split(',') {
            let tok = tok.trim();
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, idx + 1, format!("invalid number `{tok}`")))?;
            values.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(parse_err(
                    path,
                    idx + 1,
                    format!("expected {w} columns, found {count}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    Ok(Array2::from_shape_vec((rows, width), values).expect("row widths checked"))
}

pub fn parse_labels(path: &Path, text: &str) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(
            line.parse()
                .map_err(|_| parse_err(path, idx + 1, format!("invalid label `{line}`")))?,
        );
    }
    Ok(labels)
}

/// Loads a graph from the plain-text edge, feature and (optional) label files.
/// The node count is the number of feature rows.
pub fn load_graph(
    edges_path: impl AsRef<Path>,
    features_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<Graph> {
    let edges_path = edges_path.as_ref();
    let features_path = features_path.as_ref();
    let edges = parse_edges(edges_path, &read_text(edges_path)?)?;
    let features = parse_features(features_path, &read_text(features_path)?)?;
    let labels = match labels_path {
        Some(p) => Some(parse_labels(p, &read_text(p)?)?),
        None => None,
    };
    let n = features.nrows();
    Graph::new(n, edges, features, labels)
}

/// Compressed sparse row matrix. Used only as a constant operand.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    /// `self · dense`
    pub fn mul_dense(&self, dense: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, dense.nrows(), "sparse-dense shape mismatch");
        let mut out = Array2::zeros((self.rows, dense.ncols()));
        for r in 0..self.rows {
            let mut out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &dense.row(c));
            }
        }
        out
    }

    /// `selfᵀ · dense`
    pub fn transpose_mul_dense(&self, dense: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.rows, dense.nrows(), "sparse-dense shape mismatch");
        let mut out = Array2::zeros((self.cols, dense.ncols()));
        for r in 0..self.rows {
            let src = dense.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &src);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] += v;
            }
        }
        out
    }
}

/// `D̃^{-1/2} Ã D̃^{-1/2}` with `Ã = A` or `A + I`.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    pub matrix: CsrMatrix,
    pub self_loops: bool,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.matrix.rows
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.matrix.to_dense()
    }
}

/// Symmetric normalization of an undirected edge list. Zero-degree rows stay zero.
pub fn normalize_edges(n: usize, edges: &[(usize, usize)], self_loops: bool) -> NormalizedAdjacency {
    let mut degree: Vec<f64> = vec![if self_loops { 1.0 } else { 0.0 }; n];
    for &(a, b) in edges {
        degree[a] += 1.0;
        degree[b] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut triplets = Vec::with_capacity(2 * edges.len() + n);
    for &(a, b) in edges {
        let w = inv_sqrt[a] * inv_sqrt[b];
        triplets.push((a, b, w));
        triplets.push((b, a, w));
    }
    if self_loops {
        for (i, s) in inv_sqrt.iter().enumerate() {
            triplets.push((i, i, s * s));
        }
    }
    NormalizedAdjacency {
        matrix: CsrMatrix::from_triplets(n, n, triplets),
        self_loops,
    }
}

pub fn normalize_adjacency(g: &Graph, self_loops: bool) -> NormalizedAdjacency {
    normalize_edges(g.n, &g.edges, self_loops)
}

/// Held-out positive and sampled negative edges for link prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    pub seed: u64,
}

pub const MIN_SPLIT_EDGES: usize = 20;

/// Random train/validation/test partition of the edge set plus uniformly sampled
/// non-edges (drawn without replacement) for validation and test.
pub fn split_edges(g: &Graph, ratios: (f64, f64, f64), seed: u64) -> Result<EdgeSplit> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !r.is_finite() || *r < 0.0) || (tr + va + te - 1.0).abs() > 1e-9
    {
        return Err(GraphError::Ratios(ratios));
    }
    let total = g.num_edges();
    let n_test = (total as f64 * te).round() as usize;
    let n_val = (total as f64 * va).round() as usize;
    let needed = n_val + n_test;
    let n = g.n as u128;
    let available = (n * (n - 1) / 2) as usize - total;
    if needed > available {
        return Err(GraphError::NotEnoughNonEdges {
            requested: needed,
            available,
        });
    }
    if total < MIN_SPLIT_EDGES {
        return Err(GraphError::TooFewEdges {
            needed: MIN_SPLIT_EDGES,
            have: total,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = g.edges.clone();
    shuffled.shuffle(&mut rng);
    let test_pos = shuffled[..n_test].to_vec();
    let val_pos = shuffled[n_test..n_test + n_val].to_vec();
    let mut train_pos = shuffled[n_test + n_val..].to_vec();
    train_pos.sort_unstable();

    let negatives = sample_non_edges(g, needed, available, &mut rng);
    let test_neg = negatives[..n_test].to_vec();
    let val_neg = negatives[n_test..].to_vec();

    Ok(EdgeSplit {
        train_pos,
        val_pos,
        test_pos,
        val_neg,
        test_neg,
        seed,
    })
}

fn sample_non_edges(
    g: &Graph,
    count: usize,
    available: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    if count == 0 {
        return Vec::new();
    }
    // Rejection sampling degrades once non-edges get scarce; enumerate instead.
    if available < 4 * count {
        let mut all = Vec::with_capacity(available);
        for a in 0..g.n {
            for b in a + 1..g.n {
                if !g.has_edge(a, b) {
                    all.push((a, b));
                }
            }
        }
        let (chosen, _) = all.partial_shuffle(rng, count);
        return chosen.to_vec();
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = rng.random_range(0..g.n);
        let b = rng.random_range(0..g.n);
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if g.has_edge(pair.0, pair.1) || !seen.insert(pair) {
            continue;
        }
        out.push(pair);
    }
    out
}

/// Parameters of a labeled planted-partition graph with class-correlated binary features.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedPartition {
    pub block_sizes: Vec<usize>,
    /// Edge probability inside a block.
    pub p_in: f64,
    /// Edge probability across blocks.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Probability that a node carries a feature of its own class.
    pub f_in: f64,
    /// Probability that a node carries any other feature.
    pub f_out: f64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        Self {
            block_sizes: vec![40, 40, 40],
            p_in: 0.15,
            p_out: 0.01,
            feature_dim: 60,
            f_in: 0.3,
            f_out: 0.03,
        }
    }
}

impl PlantedPartition {
    /// Samples the graph. Feature columns are split evenly between classes.
    pub fn sample(&self, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = self
            .block_sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect();
        let n = labels.len();
        let k = self.block_sizes.len().max(1);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = if labels[i] == labels[j] { self.p_in } else { self.p_out };
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        let features = Array2::from_shape_fn((n, self.feature_dim), |(i, f)| {
            let own = f * k / self.feature_dim.max(1) == labels[i];
            let p = if own { self.f_in } else { self.f_out };
            if rng.random_bool(p) {
                1.0
            } else {
                0.0
            }
        });
        Graph::new(n, edges, features, Some(labels)).expect("generated graph is valid")
    }
}
