//! Moment tables for Gaussians, box-truncated Gaussians, mixtures and
//! samples, plus per-timestep mixture predictions.

mod gaussian;
mod prediction;
mod table;
mod truncated;

use std::collections::BTreeMap;

pub use gaussian::{gaussian_moments, gaussian_moments_nd, GaussianSpec};
pub use prediction::{
    interpolate_prediction, truncate_prediction, ComponentDist, GaussianMixture, MixtureComponent, MixtureSpec,
    MixturePrediction, MixtureStep, PredictionSpec,
};
pub use table::MomentTable;
pub use truncated::{
    box_mass, gauss_legendre, quadrature_moments, truncated_gaussian_moments, TruncatedGaussianSpec, TruncationBox,
    MIN_BOX_MASS,
};

use crate::polyalg::MultiIndex;

/// Moment order needed for the mean and variance of a quadratic constraint.
pub const PLANNER_ORDER: u32 = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistError {
    #[error("moment table is missing entry {0}")]
    IncompleteTable(MultiIndex),
    #[error("moment table has out-of-range entry {0}")]
    UnexpectedEntry(MultiIndex),
    #[error("moment {0} is not finite")]
    NonFiniteMoment(MultiIndex),
    #[error("zero-index moment is {0}, expected 1")]
    ZeroIndexNotOne(f64),
    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("covariance is not symmetric")]
    AsymmetricCovariance,
    #[error("distribution parameters must be finite")]
    NonFiniteParameter,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("tables disagree in dimension or order")]
    MismatchedTables,
    #[error("truncation box is empty")]
    EmptyBox,
    #[error("truncation width must be positive, got {0}")]
    InvalidTruncation(f64),
    #[error("truncation box has negligible probability mass ({0:e})")]
    NegligibleMass(f64),
    #[error("box quadrature did not converge with {0} nodes per axis")]
    QuadratureNonConvergence(usize),
    #[error("correlated covariance is singular; cannot truncate")]
    SingularCorrelated,
    #[error("mixture weights must be non-negative and sum to 1 (sum {0})")]
    InvalidWeights(f64),
    #[error("mixture has no components")]
    EmptyMixture,
    #[error("at least 2 samples required, got {0}")]
    TooFewSamples(usize),
    #[error("component count mismatch: {0} vs {1}")]
    ComponentCountMismatch(usize, usize),
    #[error("endpoint weights differ for component {0}")]
    WeightMismatch(usize),
    #[error("prediction needs at least one step")]
    NoSteps,
    #[error("moment order {0} is too low, need at least {1}")]
    OrderTooLow(u32, u32),
}

pub(crate) fn table_entries(order: u32, values: &[f64]) -> BTreeMap<MultiIndex, f64> {
    MultiIndex::all_up_to(2, order)
        .into_iter()
        .zip(values.iter().copied())
        .collect()
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<(), DistError> {
    if weights.is_empty() {
        return Err(DistError::EmptyMixture);
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DistError::InvalidWeights(sum));
    }
    Ok(())
}

/// Moments of a mixture: the weighted sum of component tables.
pub fn mixture_moments(weights: &[f64], tables: &[MomentTable]) -> Result<MomentTable, DistError> {
    check_weights(weights)?;
    if weights.len() != tables.len() {
        return Err(DistError::ComponentCountMismatch(weights.len(), tables.len()));
    }
    let (dim, order) = (tables[0].dimension(), tables[0].order());
    if tables.iter().any(|t| t.dimension() != dim || t.order() != order) {
        return Err(DistError::MismatchedTables);
    }
    MomentTable::from_fn(dim, order, |idx| {
        weights
            .iter()
            .zip(tables)
            .map(|(w, t)| w * t.get(idx).unwrap())
            .sum()
    })
}

/// Sample-average moments of planar samples.
pub fn empirical_moments(samples: &[[f64; 2]], order: u32) -> Result<MomentTable, DistError> {
    if samples.len() < 2 {
        return Err(DistError::TooFewSamples(samples.len()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DistError::NonFiniteParameter);
    }
    let idx = MultiIndex::all_up_to(2, order);
    let o = order as usize;
    let mut acc = vec![0.0; idx.len()];
    let mut px = vec![1.0; o + 1];
    let mut py = vec![1.0; o + 1];
    for s in samples {
        for k in 1..=o {
            px[k] = px[k - 1] * s[0];
            py[k] = py[k - 1] * s[1];
        }
        for (a, m) in acc.iter_mut().zip(&idx) {
            *a += px[m.get(0) as usize] * py[m.get(1) as usize];
        }
    }
    let n = samples.len() as f64;
    let mut entries = table_entries(order, &acc.iter().map(|a| a / n).collect::<Vec<_>>());
    entries.insert(MultiIndex::zeros(2), 1.0);
    MomentTable::new(2, order, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(mean: f64, var: f64) -> MomentTable {
        let cov = nalgebra::DMatrix::from_element(1, 1, var);
        gaussian_moments_nd(&[mean], &cov, 4).unwrap()
    }

    #[test]
    fn mixture_of_two_normals() {
        let m = mixture_moments(&[0.5, 0.5], &[one_d(0.0, 1.0), one_d(2.0, 1.0)]).unwrap();
        assert!((m.m(&[2]) - 3.0).abs() < 1e-14);
        let m = mixture_moments(&[0.3, 0.7], &[one_d(1.0, 0.1), one_d(2.0, 0.1)]).unwrap();
        assert!((m.m(&[1]) - 1.7).abs() < 1e-14);
        let single = mixture_moments(&[1.0], &[one_d(1.0, 2.0)]).unwrap();
        assert_eq!(single, one_d(1.0, 2.0));
    }

    #[test]
    fn mixture_errors() {
        let t = one_d(0.0, 1.0);
        assert!(matches!(
            mixture_moments(&[0.5, 0.6], &[t.clone(), t.clone()]),
            Err(DistError::InvalidWeights(_))
        ));
        let t2 = MomentTable::point_mass(&[0.0, 0.0], 4);
        assert!(matches!(
            mixture_moments(&[0.5, 0.5], &[t, t2]),
            Err(DistError::MismatchedTables)
        ));
    }

    #[test]
    fn empirical_basics() {
        let m = empirical_moments(&[[1.0, 0.0], [-1.0, 0.0]], 4).unwrap();
        assert_eq!(m.m(&[1, 0]), 0.0);
        assert_eq!(m.m(&[2, 0]), 1.0);
        let c = empirical_moments(&[[1.5, 1.5]; 5], 4).unwrap();
        assert_eq!(c.m(&[3, 0]), 1.5f64.powi(3));
        assert!(c.covariance().iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(
            empirical_moments(&[[0.0, 0.0]], 2),
            Err(DistError::TooFewSamples(1))
        ));
        assert!(matches!(
            empirical_moments(&[], 2),
            Err(DistError::TooFewSamples(0))
        ));
    }
}
