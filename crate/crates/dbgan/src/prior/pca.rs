use nalgebra::SymmetricEigen;
use ndarray::Axis;

use super::{to_nalgebra, PriorError};
use crate::autodiff::Matrix;

#[derive(Clone, Debug)]
pub struct PcaProjection {
    /// Centered rows expressed in the top `q` principal directions (`rows×q`).
    pub coords: Matrix,
    /// Unit principal directions as columns (`cols×q`); zero for null directions.
    pub directions: Matrix,
    /// Squared singular values of the centered data, largest first, top `q` only.
    pub variances: Vec<f64>,
    pub explained_variance_ratio: f64,
}

/// Top eigenpairs of a symmetric matrix, largest eigenvalue first.
fn top_eigen(m: &Matrix, q: usize) -> (Vec<f64>, Matrix, f64) {
    let eig = SymmetricEigen::new(to_nalgebra(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let values = order[..q].iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let vectors = Matrix::from_shape_fn((m.nrows(), q), |(i, c)| eig.eigenvectors[(i, order[c])]);
    (values, vectors, total)
}

/// Projects column-centered `x` onto its top `q` right singular directions.
///
/// Each direction's largest-magnitude component (first one on ties) is made
/// positive so results do not depend on the eigensolver's sign choice.
pub fn pca_project(x: &Matrix, q: usize) -> Result<PcaProjection, PriorError> {
    let (rows, cols) = x.dim();
    let max = rows.min(cols);
    if q > max {
        return Err(PriorError::ProjectionTooWide { q, max });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PriorError::NonFinite("PCA input"));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let xc = x - &mean;

    let (variances, mut directions, total) = if rows < cols {
        let (vals, u, total) = top_eigen(&xc.dot(&xc.t()), q);
        let mut v = xc.t().dot(&u);
        for (c, &s2) in vals.iter().enumerate() {
            let s = s2.sqrt();
            let mut col = v.column_mut(c);
            if s > 1e-12 * total.sqrt().max(1.0) {
                col.mapv_inplace(|a| a / s);
            } else {
                col.fill(0.0);
            }
        }
        (vals, v, total)
    } else {
        top_eigen(&xc.t().dot(&xc), q)
    };

    for mut col in directions.columns_mut() {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.mapv_inplace(|a| -a);
        }
    }
    let coords = xc.dot(&directions);
    let kept: f64 = variances.iter().sum();
    Ok(PcaProjection {
        coords,
        directions,
        variances,
        explained_variance_ratio: if total > 0.0 { kept / total } else { 0.0 },
    })
}
