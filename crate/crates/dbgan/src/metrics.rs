//! Link-prediction ranking metrics and clustering quality scores.

use pathfinding::prelude::{kuhn_munkres, Matrix as Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Matrix;
use crate::graph::EdgeSplit;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least one {0} score")]
    Empty(&'static str),
    #[error("node index {index} out of range for {n} embeddings")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("length mismatch: {0} assignments vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("cannot form {k} clusters from {n} points")]
    TooManyClusters { k: usize, n: usize },
    #[error("clustering requested but the graph has no labels")]
    MissingLabels,
    #[error("non-finite score")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(hᵢ · hⱼ)`.
pub fn edge_score(h: &Matrix, i: usize, j: usize) -> Result<f64> {
    let n = h.nrows();
    for index in [i, j] {
        if index >= n {
            return Err(MetricsError::IndexOutOfRange { index, n });
        }
    }
    Ok(sigmoid(h.row(i).dot(&h.row(j))))
}

pub fn edge_scores(h: &Matrix, edges: &[(usize, usize)]) -> Result<Vec<f64>> {
    edges.iter().map(|&(i, j)| edge_score(h, i, j)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkPredResult {
    pub auc: f64,
    pub ap: f64,
    pub pos_scores: Vec<f64>,
    pub neg_scores: Vec<f64>,
}

/// Area under the ROC curve (ties count one half) and average precision
/// (step interpolation, tied scores form one threshold).
pub fn compute_auc_ap(pos: &[f64], neg: &[f64]) -> Result<(f64, f64)> {
    if pos.is_empty() {
        return Err(MetricsError::Empty("positive"));
    }
    if neg.is_empty() {
        return Err(MetricsError::Empty("negative"));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(MetricsError::NonFinite);
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    // Walk tie groups from the highest score down.
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut half_wins = 0u64; // twice the number of positive-over-negative wins
    let mut ap = 0.0;
    let mut k = 0;
    while k < all.len() {
        let s = all[k].0;
        let (mut gp, mut gn) = (0usize, 0usize);
        while k < all.len() && all[k].0 == s {
            if all[k].1 {
                gp += 1;
            } else {
                gn += 1;
            }
            k += 1;
        }
        // Positives in this group beat every negative below it and tie with the group's negatives.
        half_wins += (gp as u64) * (2 * (neg.len() - fp - gn) as u64 + gn as u64);
        tp += gp;
        fp += gn;
        if gp > 0 {
            ap += (gp as f64 / np) * (tp as f64 / (tp + fp) as f64);
        }
    }
    let auc = half_wins as f64 / 2.0 / (np * nn);
    Ok((auc, ap))
}

pub fn link_prediction(h: &Matrix, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Result<LinkPredResult> {
    let pos_scores = edge_scores(h, pos)?;
    let neg_scores = edge_scores(h, neg)?;
    let (auc, ap) = compute_auc_ap(&pos_scores, &neg_scores)?;
    Ok(LinkPredResult {
        auc,
        ap,
        pos_scores,
        neg_scores,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ndarray::ArrayView1<f64>, centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iter` is reached. An emptied cluster is moved onto the
/// point farthest from its current centroid.
pub fn kmeans(h: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = h.nrows();
    if k == 0 || k > n {
        return Err(MetricsError::TooManyClusters { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Matrix::zeros((k, h.ncols()));
    centroids.row_mut(0).assign(&h.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = h.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&h.row(pick));
        for (i, r) in h.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(c)));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        for (i, r) in h.rows().into_iter().enumerate() {
            let (c, _) = nearest(r, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        let mut sums = Matrix::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, r) in h.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(assignments[i]);
            s += &r;
            counts[assignments[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    let da = sq_dist(h.row(a), centroids.row(assignments[a]));
                    let db = sq_dist(h.row(b), centroids.row(assignments[b]));
                    da.total_cmp(&db).then(b.cmp(&a))
                });
            if let Some(i) = far {
                let old = assignments[i];
                counts[old] -= 1;
                counts[c] = 1;
                assignments[i] = c;
                centroids.row_mut(c).assign(&h.row(i));
                let (mut s, mut m) = (ndarray::Array1::zeros(h.ncols()), 0usize);
                for (j, r) in h.rows().into_iter().enumerate() {
                    if assignments[j] == old {
                        s += &r;
                        m += 1;
                    }
                }
                centroids.row_mut(old).assign(&(s / m as f64));
                changed = true;
            }
        }
        trace.push(inertia(h, &assignments, &centroids));
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        inertia: *trace.last().unwrap(),
        assignments,
        centroids,
        inertia_trace: trace,
        iterations,
    })
}

fn inertia(h: &Matrix, assignments: &[usize], centroids: &Matrix) -> f64 {
    h.rows()
        .into_iter()
        .zip(assignments)
        .map(|(r, &c)| sq_dist(r, centroids.row(c)))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

/// `table[a][b]` counts items with assignment `a` and label `b`.
pub fn contingency(assignments: &[usize], labels: &[usize]) -> Result<Vec<Vec<u64>>> {
    if assignments.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(assignments.len(), labels.len()));
    }
    let ka = assignments.iter().max().map_or(0, |m| m + 1);
    let kl = labels.iter().max().map_or(0, |m| m + 1);
    let mut t = vec![vec![0u64; kl]; ka];
    for (&a, &l) in assignments.iter().zip(labels) {
        t[a][l] += 1;
    }
    Ok(t)
}

/// Best one-to-one cluster-to-label matching accuracy.
pub fn accuracy_from_table(table: &[Vec<u64>]) -> f64 {
    let total: u64 = table.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    let size = rows.max(cols);
    // Square-pad so the solver's rows ≤ columns requirement always holds.
    let mut w = Weights::new(size, size, 0i64);
    for (a, row) in table.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            w[(a, b)] = c as i64;
        }
    }
    let (matched, _) = kuhn_munkres(&w);
    matched as f64 / total as f64
}

fn entropy(counts: impl Iterator<Item = u64>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two entropies.
pub fn nmi_from_table(table: &[Vec<u64>]) -> f64 {
    let total: u64 = table.iter().flatten().sum();
    let nt = total as f64;
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols = table.first().map_or(0, Vec::len);
    let col_sums: Vec<u64> = (0..cols).map(|b| table.iter().map(|r| r[b]).sum()).collect();
    let hu = entropy(row_sums.iter().copied(), nt);
    let hv = entropy(col_sums.iter().copied(), nt);
    if hu == 0.0 && hv == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for (a, row) in table.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / nt * (c * nt / (row_sums[a] as f64 * col_sums[b] as f64)).ln();
            }
        }
    }
    (mi / ((hu + hv) / 2.0)).clamp(0.0, 1.0)
}

fn choose2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari_from_table(table: &[Vec<u64>]) -> f64 {
    let total: u64 = table.iter().flatten().sum();
    if total < 2 {
        return 1.0;
    }
    let cols = table.first().map_or(0, Vec::len);
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let a: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let b: f64 = (0..cols).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = a * b / choose2(total);
    let max = (a + b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

pub fn clustering_metrics(assignments: &[usize], labels: &[usize]) -> Result<ClusterScores> {
    let t = contingency(assignments, labels)?;
    Ok(ClusterScores {
        acc: accuracy_from_table(&t),
        nmi: nmi_from_table(&t),
        ari: ari_from_table(&t),
    })
}

pub const KMEANS_MAX_ITER: usize = 300;

/// Metrics of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub cluster: Option<ClusterScores>,
}

/// Scores held-out test edges and, with labels, clusters `h` into `k` groups.
pub fn evaluate_embeddings(
    h: &Matrix,
    split: Option<&EdgeSplit>,
    labels: Option<&[usize]>,
    k: usize,
    seed: u64,
) -> Result<RunMetrics> {
    let lp = split
        .map(|s| link_prediction(h, &s.test_pos, &s.test_neg))
        .transpose()?;
    let cluster = match labels {
        Some(l) => {
            let km = kmeans(h, k, seed, KMEANS_MAX_ITER)?;
            Some(clustering_metrics(&km.assignments, l)?)
        }
        None => None,
    };
    Ok(RunMetrics {
        auc: lp.as_ref().map(|r| r.auc),
        ap: lp.as_ref().map(|r| r.ap),
        cluster,
    })
}

/// Mean, sample standard deviation and standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub se: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        mean,
        std,
        se: std / n.sqrt(),
    })
}

/// Aggregated metrics in the fixed JSON layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari_std: Option<f64>,
    pub seed_count: usize,
}

impl MetricsReport {
    pub fn from_runs(runs: &[RunMetrics]) -> Self {
        let auc = summarize(&runs.iter().filter_map(|r| r.auc).collect::<Vec<_>>());
        let ap = summarize(&runs.iter().filter_map(|r| r.ap).collect::<Vec<_>>());
        let pick = |f: fn(&ClusterScores) -> f64| {
            summarize(&runs.iter().filter_map(|r| r.cluster.as_ref().map(f)).collect::<Vec<_>>())
        };
        let (acc, nmi, ari) = (pick(|c| c.acc), pick(|c| c.nmi), pick(|c| c.ari));
        Self {
            auc: auc.map(|s| s.mean),
            ap: ap.map(|s| s.mean),
            auc_std: auc.map(|s| s.std),
            ap_std: ap.map(|s| s.std),
            auc_se: auc.map(|s| s.se),
            ap_se: ap.map(|s| s.se),
            acc: acc.map(|s| s.mean),
            nmi: nmi.map(|s| s.mean),
            ari: ari.map(|s| s.mean),
            acc_std: acc.map(|s| s.std),
            nmi_std: nmi.map(|s| s.std),
            ari_std: ari.map(|s| s.std),
            seed_count: runs.len(),
        }
    }
}
