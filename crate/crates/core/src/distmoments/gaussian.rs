use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::table::{binomial, sub_indices, MomentTable};
use super::DistError;
use crate::polyalg::MultiIndex;

/// Planar Gaussian `N(mean, cov)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl GaussianSpec {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self, DistError> {
        let g = GaussianSpec { mean, cov };
        g.validate()?;
        Ok(g)
    }

    pub fn isotropic(mean: [f64; 2], sigma: f64) -> Self {
        GaussianSpec {
            mean,
            cov: [[sigma * sigma, 0.0], [0.0, sigma * sigma]],
        }
    }

    pub fn mean_vector(&self) -> Vector2<f64> {
        Vector2::new(self.mean[0], self.mean[1])
    }

    pub fn cov_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov[0][0], self.cov[0][1], self.cov[1][0], self.cov[1][1])
    }

    pub fn std_devs(&self) -> [f64; 2] {
        [self.cov[0][0].max(0.0).sqrt(), self.cov[1][1].max(0.0).sqrt()]
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let c = &self.cov;
        if !self.mean.iter().chain(c.iter().flatten()).all(|v| v.is_finite()) {
            return Err(DistError::NonFiniteParameter);
        }
        check_covariance(&DMatrix::from_fn(2, 2, |i, j| c[i][j]))
    }

    /// Convex combination `(1 − s)·self + s·other` of means and covariances.
    pub fn lerp(&self, other: &GaussianSpec, s: f64) -> GaussianSpec {
        let l = |a: f64, b: f64| a + s * (b - a);
        GaussianSpec {
            mean: [l(self.mean[0], other.mean[0]), l(self.mean[1], other.mean[1])],
            cov: [
                [l(self.cov[0][0], other.cov[0][0]), l(self.cov[0][1], other.cov[0][1])],
                [l(self.cov[1][0], other.cov[1][0]), l(self.cov[1][1], other.cov[1][1])],
            ],
        }
    }

    pub fn shifted(&self, offset: [f64; 2]) -> GaussianSpec {
        GaussianSpec {
            mean: [self.mean[0] + offset[0], self.mean[1] + offset[1]],
            cov: self.cov,
        }
    }

    pub fn moments(&self, order: u32) -> Result<MomentTable, DistError> {
        gaussian_moments(self, order)
    }
}

pub(crate) fn check_covariance(cov: &DMatrix<f64>) -> Result<(), DistError> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(DistError::DimensionMismatch {
            expected: n,
            found: cov.ncols(),
        });
    }
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 {
                return Err(DistError::AsymmetricCovariance);
            }
        }
    }
    let scale = cov.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let min = cov
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-12 * scale {
        return Err(DistError::NotPositiveSemidefinite(min));
    }
    Ok(())
}

pub fn gaussian_moments(spec: &GaussianSpec, order: u32) -> Result<MomentTable, DistError> {
    spec.validate()?;
    let cov = DMatrix::from_fn(2, 2, |i, j| spec.cov[i][j]);
    gaussian_moments_nd(&spec.mean, &cov, order)
}

/// Raw moments of `N(mean, cov)` in any dimension.
///
/// Central moments come from the recursion
/// `E[z^β] = Σ_j Σ_ij β'_j E[z^(β'−e_j)]` with `β' = β − e_i`,
/// then a binomial expansion adds the mean.
pub fn gaussian_moments_nd(
    mean: &[f64],
    cov: &DMatrix<f64>,
    order: u32,
) -> Result<MomentTable, DistError> {
    let n = mean.len();
    if cov.nrows() != n {
        return Err(DistError::DimensionMismatch {
            expected: n,
            found: cov.nrows(),
        });
    }
    check_covariance(cov)?;
    let mut memo = HashMap::new();
    MomentTable::from_fn(n, order, |alpha| {
        sub_indices(alpha)
            .into_iter()
            .map(|beta| {
                let mut c = central(&beta, cov, &mut memo);
                if c == 0.0 {
                    return 0.0;
                }
                for i in 0..n {
                    let (a, b) = (alpha.get(i), beta.get(i));
                    c *= binomial(a, b) * mean[i].powi((a - b) as i32);
                }
                c
            })
            .sum()
    })
}

fn central(beta: &MultiIndex, cov: &DMatrix<f64>, memo: &mut HashMap<MultiIndex, f64>) -> f64 {
    if beta.is_zero() {
        return 1.0;
    }
    if beta.degree() % 2 == 1 {
        return 0.0;
    }
    if let Some(&v) = memo.get(beta) {
        return v;
    }
    let n = beta.dim();
    let i = (0..n).find(|&i| beta.get(i) > 0).unwrap();
    let mut reduced = beta.exponents().to_vec();
    reduced[i] -= 1;
    let mut total = 0.0;
    for j in 0..n {
        if reduced[j] == 0 || cov[(i, j)] == 0.0 {
            continue;
        }
        let mut next = reduced.clone();
        next[j] -= 1;
        total += cov[(i, j)] * reduced[j] as f64 * central(&MultiIndex::new(next), cov, memo);
    }
    memo.insert(beta.clone(), total);
    total
}
