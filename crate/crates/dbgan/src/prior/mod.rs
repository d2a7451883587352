//! Structure-aware latent prior.
//!
//! Prototype nodes are drawn from a k-DPP over `L = I + Â`, their features are
//! reduced with PCA to the latent width, and a Gaussian KDE over the reduced rows
//! becomes the prior that latent codes are matched against.

mod dpp;
mod kde;
mod pca;

pub use dpp::{
    build_dpp_kernel, dense_kernel_from, determinant, elementary_symmetric, greedy_map_dpp,
    kdpp_subset_probability, sample_kdpp, DppKernel, GreedySelection, PrototypeSet,
    SelectionMethod, DEFAULT_EXACT_THRESHOLD, PSD_TOL, RANK_TOL, SYMMETRY_TOL,
};
pub use kde::{fit_kde, scott_bandwidth, BandwidthRule, PriorKde};
pub use pca::{pca_project, PcaProjection};

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Matrix;
use crate::graph::{normalize_adjacency, Graph};

pub const DEFAULT_PROTOTYPES: usize = 500;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("kernel is not symmetric at ({i}, {j}): gap {gap:e}")]
    Asymmetric { i: usize, j: usize, gap: f64 },
    #[error("kernel must be square, got {0:?}")]
    NotSquare((usize, usize)),
    #[error("subset has {got} items, expected {k}")]
    SubsetSize { got: usize, k: usize },
    #[error("{n} nodes exceed the exact k-DPP threshold of {threshold}; use greedy MAP selection")]
    TooLargeForExact { n: usize, threshold: usize },
    #[error("cannot draw {m} items: kernel effective rank is {rank}")]
    RankDeficient { m: usize, rank: usize },
    #[error("projection width {q} exceeds min(rows, cols) = {max}")]
    ProjectionTooWide { q: usize, max: usize },
    #[error("Scott bandwidth needs at least 2 centers, got {0}")]
    TooFewCenters(usize),
    #[error("centers have zero spread; jitter them or use a fixed bandwidth")]
    DegenerateCenters,
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("need at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// Prototype-based KDE.
    Pde,
    /// `N(0, I)`.
    StandardNormal,
    /// KDE over the PCA of every node's features.
    XOnly,
}

/// Distribution that prior codes `Z` are drawn from.
#[derive(Clone, Debug)]
pub enum Prior {
    Kde(PriorKde),
    StandardNormal { dim: usize },
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::Kde(k) => k.dim(),
            Prior::StandardNormal { dim } => *dim,
        }
    }

    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Matrix {
        match self {
            Prior::Kde(k) => k.sample(count, rng),
            Prior::StandardNormal { dim } => {
                Matrix::from_shape_simple_fn((count, *dim), || rng.sample(StandardNormal))
            }
        }
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        match self {
            Prior::Kde(k) => k.density(z),
            Prior::StandardNormal { dim } => {
                let sq: f64 = z.iter().map(|v| v * v).sum();
                (-0.5 * sq - 0.5 * *dim as f64 * (2.0 * std::f64::consts::PI).ln()).exp()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PriorEstimate {
    pub prior: Prior,
    pub prototypes: Option<PrototypeSet>,
    /// Share of variance kept by the PCA step.
    pub explained_variance: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct PriorOptions {
    pub latent_dim: usize,
    pub prototypes: usize,
    pub seed: u64,
    pub mode: PriorMode,
    pub exact_threshold: usize,
}

impl PriorOptions {
    pub fn new(latent_dim: usize, seed: u64) -> Self {
        Self {
            latent_dim,
            prototypes: DEFAULT_PROTOTYPES,
            seed,
            mode: PriorMode::Pde,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
        }
    }
}

/// Chooses prototypes from `g`'s structure. Exact k-DPP sampling below the
/// threshold, greedy MAP above it. The requested count is capped by `n` and,
/// for exact sampling, by the kernel's effective rank.
pub fn select_prototypes(
    g: &Graph,
    m: usize,
    exact_threshold: usize,
    rng: &mut impl Rng,
) -> Result<PrototypeSet, PriorError> {
    if m == 0 {
        return Err(PriorError::Empty("prototype"));
    }
    let mut kernel = build_dpp_kernel(&normalize_adjacency(g, false))?;
    let n = kernel.n();
    if n <= exact_threshold {
        let m = m.min(n).min(kernel.effective_rank());
        sample_kdpp(&mut kernel, m, exact_threshold, rng)
    } else {
        Ok(greedy_map_dpp(&kernel, m).prototypes)
    }
}

/// PCA to `q` dimensions and a Scott-bandwidth KDE. With fewer than `q`
/// available directions the remaining coordinates of every center are zero and
/// the bandwidth comes from the informative ones.
fn kde_over(rows: &Matrix, q: usize) -> Result<(PriorKde, f64), PriorError> {
    let r = q.min(rows.nrows()).min(rows.ncols());
    let proj = pca_project(rows, r)?;
    let bandwidth = scott_bandwidth(&proj.coords, q)?;
    let mut centers = Matrix::zeros((rows.nrows(), q));
    centers.slice_mut(ndarray::s![.., ..r]).assign(&proj.coords);
    let kde = fit_kde(centers, BandwidthRule::Fixed(bandwidth))?;
    Ok((kde, proj.explained_variance_ratio))
}

/// Builds the latent prior for `g`; pass the graph restricted to training edges
/// so held-out links cannot influence prototype selection.
pub fn estimate_prior(g: &Graph, opts: &PriorOptions) -> Result<PriorEstimate, PriorError> {
    let q = opts.latent_dim;
    match opts.mode {
        PriorMode::StandardNormal => Ok(PriorEstimate {
            prior: Prior::StandardNormal { dim: q },
            prototypes: None,
            explained_variance: None,
        }),
        PriorMode::XOnly => {
            let (kde, ev) = kde_over(g.features(), q)?;
            Ok(PriorEstimate {
                prior: Prior::Kde(kde),
                prototypes: None,
                explained_variance: Some(ev),
            })
        }
        PriorMode::Pde => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let protos = select_prototypes(g, opts.prototypes, opts.exact_threshold, &mut rng)?;
            let x = g.features();
            let rows = Matrix::from_shape_fn((protos.indices.len(), x.ncols()), |(r, c)| {
                x[[protos.indices[r], c]]
            });
            let (kde, ev) = kde_over(&rows, q)?;
            Ok(PriorEstimate {
                prior: Prior::Kde(kde),
                prototypes: Some(protos),
                explained_variance: Some(ev),
            })
        }
    }
}

/// One index per line.
pub fn write_prototypes_csv(path: &Path, set: &PrototypeSet) -> Result<(), PriorError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "index")?;
    for i in &set.indices {
        writeln!(out, "{i}")?;
    }
    out.flush()?;
    Ok(())
}

/// Comma-separated matrix, one row per line, no header.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<(), PriorError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}
