//! Determinantal point processes over a graph-derived kernel `L = I + Â`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use super::{to_nalgebra, PriorError};
use crate::autodiff::Matrix;
use crate::graph::{CsrMatrix, NormalizedAdjacency};

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-8;
/// Eigenvalues above this count toward the effective rank.
pub const RANK_TOL: f64 = 1e-10;
/// Largest `n` for which exact (eigendecomposition-based) k-DPP sampling is attempted.
pub const DEFAULT_EXACT_THRESHOLD: usize = 3000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    ExactKdpp,
    GreedyMap,
}

/// Sorted, distinct node indices chosen as prototypes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrototypeSet {
    pub indices: Vec<usize>,
    pub method: SelectionMethod,
}

#[derive(Clone, Debug)]
enum Repr {
    Dense(Matrix),
    /// `I + S` for a symmetric sparse `S`, never materialized.
    IdentityPlusSparse(CsrMatrix),
}

/// Symmetric PSD DPP kernel with a lazily computed eigendecomposition.
#[derive(Clone, Debug)]
pub struct DppKernel {
    repr: Repr,
    eig: Option<(Vec<f64>, Matrix)>,
}

fn check_symmetric(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<(), PriorError> {
    for i in 0..n {
        for j in i + 1..n {
            let gap = (entry(i, j) - entry(j, i)).abs();
            if gap > SYMMETRY_TOL {
                return Err(PriorError::Asymmetric { i, j, gap });
            }
        }
    }
    Ok(())
}

/// `L = I + Â` from the normalized adjacency without self-loops. Its eigenvalues
/// lie in `[0, 2]` because those of `Â` lie in `[-1, 1]`.
pub fn build_dpp_kernel(adj: &NormalizedAdjacency) -> Result<DppKernel, PriorError> {
    let m = &adj.matrix;
    let n = m.shape().0;
    for i in 0..n {
        for (j, v) in m.row(i) {
            let gap = (v - m.get(j, i)).abs();
            if gap > SYMMETRY_TOL {
                return Err(PriorError::Asymmetric { i, j, gap });
            }
        }
    }
    Ok(DppKernel {
        repr: Repr::IdentityPlusSparse(m.clone()),
        eig: None,
    })
}

impl DppKernel {
    /// Wraps an explicit symmetric matrix.
    pub fn from_dense(l: Matrix) -> Result<Self, PriorError> {
        if l.nrows() != l.ncols() {
            return Err(PriorError::NotSquare(l.dim()));
        }
        check_symmetric(l.nrows(), |i, j| l[[i, j]])?;
        Ok(Self {
            repr: Repr::Dense(l),
            eig: None,
        })
    }

    pub fn n(&self) -> usize {
        match &self.repr {
            Repr::Dense(m) => m.nrows(),
            Repr::IdentityPlusSparse(s) => s.shape().0,
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.repr {
            Repr::Dense(m) => m[[i, j]],
            Repr::IdentityPlusSparse(s) => s.get(i, j) + if i == j { 1.0 } else { 0.0 },
        }
    }

    fn row_into(&self, i: usize, out: &mut [f64]) {
        match &self.repr {
            Repr::Dense(m) => out.copy_from_slice(m.row(i).as_slice().unwrap()),
            Repr::IdentityPlusSparse(s) => {
                out.fill(0.0);
                out[i] = 1.0;
                for (j, v) in s.row(i) {
                    out[j] += v;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::IdentityPlusSparse(s) => s.to_dense() + Matrix::eye(s.shape().0),
        }
    }

    /// Principal submatrix `L_S`.
    pub fn submatrix(&self, s: &[usize]) -> Matrix {
        Matrix::from_shape_fn((s.len(), s.len()), |(a, b)| self.entry(s[a], s[b]))
    }

    /// Eigenvalues (ascending) and matching unit eigenvectors as columns.
    pub fn eigen(&mut self) -> &(Vec<f64>, Matrix) {
        if self.eig.is_none() {
            let eig = SymmetricEigen::new(to_nalgebra(&self.to_dense()));
            let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let n = order.len();
            let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
            let vectors = Matrix::from_shape_fn((n, n), |(i, c)| eig.eigenvectors[(i, order[c])]);
            self.eig = Some((values, vectors));
        }
        self.eig.as_ref().unwrap()
    }

    pub fn min_eigenvalue(&mut self) -> f64 {
        self.eigen().0.first().copied().unwrap_or(0.0)
    }

    pub fn effective_rank(&mut self) -> usize {
        self.eigen().0.iter().filter(|&&l| l > RANK_TOL).count()
    }
}

pub fn determinant(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    to_nalgebra(m).determinant()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Table of `ln e_l(λ_1..λ_j)` for `l ≤ k`, `j ≤ n`, indexed `[l][j]`.
fn log_esp_table(eigenvalues: &[f64], k: usize) -> Vec<Vec<f64>> {
    let n = eigenvalues.len();
    let mut t = vec![vec![f64::NEG_INFINITY; n + 1]; k + 1];
    t[0].fill(0.0);
    for l in 1..=k {
        for j in 1..=n {
            let lam = eigenvalues[j - 1].max(0.0);
            let take = if lam > 0.0 {
                lam.ln() + t[l - 1][j - 1]
            } else {
                f64::NEG_INFINITY
            };
            t[l][j] = log_add_exp(t[l][j - 1], take);
        }
    }
    t
}

/// Elementary symmetric polynomial `e_k` of the given values (negatives clamped to 0).
pub fn elementary_symmetric(values: &[f64], k: usize) -> f64 {
    log_esp_table(values, k)[k][values.len()].exp()
}

/// `P(S) = det(L_S) / e_k(λ(L))` for `|S| = k`.
pub fn kdpp_subset_probability(
    kernel: &mut DppKernel,
    subset: &[usize],
    k: usize,
) -> Result<f64, PriorError> {
    if subset.len() != k {
        return Err(PriorError::SubsetSize {
            got: subset.len(),
            k,
        });
    }
    let det = determinant(&kernel.submatrix(subset));
    let log_norm = log_esp_table(&kernel.eigen().0, k)[k][kernel.n()];
    Ok(det.max(0.0) * (-log_norm).exp())
}

/// Exact k-DPP sample of size `m`.
///
/// Eigenvectors are chosen with the elementary-symmetric-polynomial recursion,
/// then items are drawn one at a time from the resulting projection DPP with an
/// incremental Cholesky-style conditioning of its kernel `V Vᵀ`.
pub fn sample_kdpp(
    kernel: &mut DppKernel,
    m: usize,
    exact_threshold: usize,
    rng: &mut impl Rng,
) -> Result<PrototypeSet, PriorError> {
    let n = kernel.n();
    if n > exact_threshold {
        return Err(PriorError::TooLargeForExact {
            n,
            threshold: exact_threshold,
        });
    }
    let rank = kernel.effective_rank();
    if m > rank {
        return Err(PriorError::RankDeficient { m, rank });
    }
    let (values, vectors) = kernel.eigen();
    let table = log_esp_table(values, m);

    let mut chosen = Vec::with_capacity(m);
    let mut l = m;
    for j in (1..=n).rev() {
        if l == 0 {
            break;
        }
        let lam = values[j - 1].max(0.0);
        if lam <= 0.0 {
            continue;
        }
        let p = (lam.ln() + table[l - 1][j - 1] - table[l][j]).exp();
        if rng.random::<f64>() < p {
            chosen.push(j - 1);
            l -= 1;
        }
    }
    let basis = Matrix::from_shape_fn((n, m), |(i, c)| vectors[[i, chosen[c]]]);

    let mut residual: Vec<f64> = basis.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut factors = Matrix::zeros((n, m));
    let mut picked = Vec::with_capacity(m);
    for t in 0..m {
        let total: f64 = residual.iter().map(|&r| r.max(0.0)).sum();
        let mut target = rng.random::<f64>() * total;
        let mut item = None;
        for (i, &r) in residual.iter().enumerate() {
            let r = r.max(0.0);
            if r <= 0.0 {
                continue;
            }
            item = Some(i);
            if target < r {
                break;
            }
            target -= r;
        }
        let item = item.expect("projection DPP ran out of mass before reaching m items");
        picked.push(item);
        let col = basis.dot(&basis.row(item));
        let pivot = residual[item].sqrt();
        for i in 0..n {
            let mut v = col[i];
            for s in 0..t {
                v -= factors[[i, s]] * factors[[item, s]];
            }
            factors[[i, t]] = v / pivot;
        }
        for i in 0..n {
            residual[i] -= factors[[i, t]] * factors[[i, t]];
        }
        residual[item] = 0.0;
    }
    picked.sort_unstable();
    Ok(PrototypeSet {
        indices: picked,
        method: SelectionMethod::ExactKdpp,
    })
}

/// Result of greedy MAP selection, with the incremental determinant factors.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedySelection {
    pub prototypes: PrototypeSet,
    /// `det(L_{S_t}) / det(L_{S_{t-1}})` for each accepted item, in selection order.
    pub gains: Vec<f64>,
    /// Selection order (`prototypes.indices` is sorted).
    pub order: Vec<usize>,
}

impl GreedySelection {
    pub fn log_det(&self) -> f64 {
        self.gains.iter().map(|g| g.ln()).sum()
    }
}

/// Greedy maximization of `log det(L_S)`: repeatedly adds the item with the
/// largest conditional variance, maintained by incremental Cholesky updates.
/// Ties go to the lowest index. Stops early, with fewer than `m` items, when
/// every remaining gain is numerically zero.
pub fn greedy_map_dpp(kernel: &DppKernel, m: usize) -> GreedySelection {
    let n = kernel.n();
    let m = m.min(n);
    let mut residual: Vec<f64> = (0..n).map(|i| kernel.entry(i, i)).collect();
    let mut taken = vec![false; n];
    let mut factors = Matrix::zeros((n, m));
    let mut row = vec![0.0; n];
    let mut order = Vec::with_capacity(m);
    let mut gains = Vec::with_capacity(m);
    for t in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for (i, &r) in residual.iter().enumerate() {
            if !taken[i] && best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
        let Some((j, gain)) = best else { break };
        if gain <= RANK_TOL {
            break;
        }
        taken[j] = true;
        order.push(j);
        gains.push(gain);
        kernel.row_into(j, &mut row);
        let pivot = gain.sqrt();
        for i in 0..n {
            if taken[i] && i != j {
                continue;
            }
            let mut v = row[i];
            for s in 0..t {
                v -= factors[[j, s]] * factors[[i, s]];
            }
            let e = v / pivot;
            factors[[i, t]] = e;
            residual[i] -= e * e;
        }
        residual[j] = 0.0;
    }
    let mut indices = order.clone();
    indices.sort_unstable();
    GreedySelection {
        prototypes: PrototypeSet {
            indices,
            method: SelectionMethod::GreedyMap,
        },
        gains,
        order,
    }
}

pub fn dense_kernel_from(m: &DMatrix<f64>) -> Result<DppKernel, PriorError> {
    DppKernel::from_dense(Matrix::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)]))
}
