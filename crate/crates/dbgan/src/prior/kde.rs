use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PriorError;
use crate::autodiff::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// `σ̄ · m^(−1/(q+4))` with `σ̄` the mean per-dimension sample standard deviation.
    Scott,
    Fixed(f64),
}

/// Isotropic Gaussian kernel density estimate.
#[derive(Clone, Debug)]
pub struct PriorKde {
    centers: Matrix,
    bandwidth: f64,
}

/// Scott's rule for `dim`-dimensional data whose informative coordinates are
/// the columns of `centers`.
pub fn scott_bandwidth(centers: &Matrix, dim: usize) -> Result<f64, PriorError> {
    let (m, q) = centers.dim();
    if m < 2 {
        return Err(PriorError::TooFewCenters(m));
    }
    let sigma = centers.columns().into_iter().map(|c| c.std(1.0)).sum::<f64>() / q as f64;
    if !(sigma > 0.0) {
        return Err(PriorError::DegenerateCenters);
    }
    Ok(sigma * (m as f64).powf(-1.0 / (dim as f64 + 4.0)))
}

pub fn fit_kde(centers: Matrix, rule: BandwidthRule) -> Result<PriorKde, PriorError> {
    let (m, q) = centers.dim();
    if m == 0 || q == 0 {
        return Err(PriorError::Empty("KDE center"));
    }
    if centers.iter().any(|v| !v.is_finite()) {
        return Err(PriorError::NonFinite("KDE centers"));
    }
    let bandwidth = match rule {
        BandwidthRule::Fixed(b) => b,
        BandwidthRule::Scott => scott_bandwidth(&centers, q)?,
    };
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(PriorError::BadBandwidth(bandwidth));
    }
    Ok(PriorKde { centers, bandwidth })
}

impl PriorKde {
    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Log-density, computed with log-sum-exp. `-inf` far from every center.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.dim(), "point dimension mismatch");
        let b2 = self.bandwidth * self.bandwidth;
        let terms: Vec<f64> = self
            .centers
            .rows()
            .into_iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                -d2 / (2.0 * b2)
            })
            .collect();
        let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi == f64::NEG_INFINITY {
            return hi;
        }
        let lse = hi + terms.iter().map(|t| (t - hi).exp()).sum::<f64>().ln();
        let q = self.dim() as f64;
        lse - (self.len() as f64).ln() - 0.5 * q * (2.0 * std::f64::consts::PI * b2).ln()
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        self.log_density(z).exp()
    }

    /// Mixture sampling: a uniformly chosen center plus `N(0, b²I)` noise.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Matrix {
        let q = self.dim();
        let mut out = Matrix::zeros((count, q));
        for mut row in out.rows_mut() {
            let c = rng.random_range(0..self.len());
            for (j, v) in row.iter_mut().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                *v = self.centers[[c, j]] + self.bandwidth * e;
            }
        }
        out
    }
}
